"""Pointwise constitutive and thermodynamic closures.

Everything in this module is a pure function of its inputs and broadcasts over
arbitrary leading grid axes: scalars have shape (...,), vectors (..., n) and
second-rank tensors (..., n, n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.optimize import brentq


class ThermoDomainError(ValueError):
    """Raised for states outside the admissible (theta, tau) domain."""


# ---------------------------------------------------------------------------
# material coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BivariatePoly:
    """Polynomial c[i, j] * theta**i * tau**j with degree <= 2 per variable."""

    coeffs: np.ndarray  # shape (3, 3)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (3, 3):
            c2 = np.zeros((3, 3))
            c2[: c.shape[0], : c.shape[1]] = c
            c = c2
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, value: float) -> "BivariatePoly":
        c = np.zeros((3, 3))
        c[0, 0] = value
        return cls(c)

    def __call__(self, theta, tau):
        theta = np.asarray(theta, dtype=float)
        tau = np.asarray(tau, dtype=float)
        out = np.zeros(np.broadcast(theta, tau).shape)
        tp = [np.ones_like(theta), theta, theta * theta]
        sp = [np.ones_like(tau), tau, tau * tau]
        c = self.coeffs
        for i in range(3):
            for j in range(3):
                if c[i, j] != 0.0:
                    out = out + c[i, j] * tp[i] * sp[j]
        return out

    def is_constant(self) -> bool:
        return not np.any(self.coeffs[1:, :]) and not np.any(self.coeffs[:, 1:])


COEFF_NAMES = ("mu_s", "mu_V", "mu_D", "mu_P", "mu_L", "mu_0", "gamma", "alpha")


def _as_poly(v) -> BivariatePoly:
    if isinstance(v, BivariatePoly):
        return v
    if np.isscalar(v):
        return BivariatePoly.constant(float(v))
    return BivariatePoly(np.asarray(v, dtype=float))


@dataclass(frozen=True)
class CoefficientSet:
    """Viscosity / Leslie-type material functions of (theta, tau), plus the density."""

    rho: float = 1.0
    mu_s: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(1.0))
    mu_V: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(1.0))
    mu_D: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(1.0))
    mu_P: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(0.0))
    mu_L: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(0.0))
    mu_0: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(0.0))
    gamma: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(1.0))
    alpha: BivariatePoly = field(default_factory=lambda: BivariatePoly.constant(1.0))

    def __post_init__(self):
        if self.rho <= 0:
            raise ThermoDomainError(f"rho must be positive, got {self.rho}")
        for name in COEFF_NAMES:
            object.__setattr__(self, name, _as_poly(getattr(self, name)))

    @classmethod
    def from_values(cls, rho: float = 1.0, **values) -> "CoefficientSet":
        return cls(rho=rho, **{k: _as_poly(v) for k, v in values.items()})

    def evaluate(self, theta, tau) -> Dict[str, np.ndarray]:
        """All eight coefficients at (theta, tau)."""
        return {name: getattr(self, name)(theta, tau) for name in COEFF_NAMES}


# ---------------------------------------------------------------------------
# free energy and closures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FreeEnergyModel:
    """Free energy psi(theta, tau) = -c_v theta (log(theta/theta_ref) - 1) + lam(theta) tau,

    with affine tension lam(theta) = lambda_0 + b (theta - theta_ref).  The heat
    capacity is the constant c_v and d(lam)/d(tau) = 0.
    """

    c_v: float = 1.0
    lambda_0: float = 1.0
    b: float = 0.0
    theta_ref: float = 1.0

    def __post_init__(self):
        if self.c_v <= 0:
            raise ThermoDomainError(f"c_v must be positive, got {self.c_v}")
        if self.lambda_0 <= 0:
            raise ThermoDomainError(f"lambda_0 must be positive, got {self.lambda_0}")
        if self.theta_ref <= 0:
            raise ThermoDomainError(f"theta_ref must be positive, got {self.theta_ref}")

    def lam(self, theta):
        return self.lambda_0 + self.b * (np.asarray(theta, dtype=float) - self.theta_ref)

    def dlambda_dtheta(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), self.b)

    def dlambda_dtau(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def psi(self, theta, tau):
        theta = np.asarray(theta, dtype=float)
        return -self.c_v * theta * (np.log(theta / self.theta_ref) - 1.0) + self.lam(theta) * tau

    def eta(self, theta, tau):
        # eta = -d(psi)/d(theta)
        theta = np.asarray(theta, dtype=float)
        return self.c_v * np.log(theta / self.theta_ref) - self.b * np.asarray(tau, dtype=float)

    def eps(self, theta, tau):
        # eps = psi + theta * eta = c_v theta + (lambda_0 - b theta_ref) tau
        theta = np.asarray(theta, dtype=float)
        return self.c_v * theta + (self.lambda_0 - self.b * self.theta_ref) * np.asarray(tau, dtype=float)

    def kappa(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), self.c_v)

    def deps_dtau(self):
        """Constant d(eps)/d(tau) = lam - theta * d(lam)/d(theta)."""
        return self.lambda_0 - self.b * self.theta_ref


@dataclass(frozen=True)
class ThermoPoint:
    theta: np.ndarray
    tau: np.ndarray
    psi: np.ndarray
    eta: np.ndarray
    eps: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    dlambda_dtheta: np.ndarray
    dlambda_dtau: np.ndarray


def closures(model: FreeEnergyModel, theta, tau) -> ThermoPoint:
    """Evaluate psi, eta, eps, kappa, lam and the lam derivatives at (theta, tau)."""
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(theta <= 0):
        raise ThermoDomainError("closures requires theta > 0")
    if np.any(tau < 0):
        raise ThermoDomainError("closures requires tau >= 0")
    return ThermoPoint(
        theta=theta,
        tau=tau,
        psi=model.psi(theta, tau),
        eta=model.eta(theta, tau),
        eps=model.eps(theta, tau),
        kappa=model.kappa(theta),
        lam=model.lam(theta),
        dlambda_dtheta=model.dlambda_dtheta(theta),
        dlambda_dtau=model.dlambda_dtau(theta),
    )


# ---------------------------------------------------------------------------
# parameter validation
# ---------------------------------------------------------------------------

@dataclass
class ConditionPReport:
    passed: bool
    margins: Dict[str, float]
    strict: Dict[str, bool]

    def violations(self):
        out = []
        for name, m in self.margins.items():
            if (self.strict[name] and m <= 0) or (not self.strict[name] and m < 0):
                out.append((name, m))
        return out


def validate_condition_P(coeffs: CoefficientSet, model: FreeEnergyModel,
                         theta_box=(0.5, 2.0), tau_box=(0.0, 2.0),
                         samples: int = 33) -> ConditionPReport:
    """Check the positivity assumptions on a (theta, tau) sample lattice.

    Strict: mu_s, alpha, gamma, kappa, lam, lam + 2 tau dlam/dtau > 0.
    Non-strict: mu_0, mu_L >= 0.  Margins are lattice minima.
    """
    t0, t1 = theta_box
    s0, s1 = tau_box
    if not (t1 > t0 > 0) or not (s1 >= s0 >= 0):
        raise ValueError(f"invalid (theta, tau) box: {theta_box} x {tau_box}")
    th, ta = np.meshgrid(np.linspace(t0, t1, samples), np.linspace(s0, s1, samples),
                         indexing="ij")
    vals = coeffs.evaluate(th, ta)
    lam = model.lam(th)
    lam1 = model.dlambda_dtau(th)
    margins = {
        "mu_s": float(np.min(vals["mu_s"])),
        "alpha": float(np.min(vals["alpha"])),
        "gamma": float(np.min(vals["gamma"])),
        "kappa": float(np.min(model.kappa(th))),
        "lambda": float(np.min(lam)),
        "lambda+2tau*lambda1": float(np.min(lam + 2.0 * ta * lam1)),
        "mu_0": float(np.min(vals["mu_0"])),
        "mu_L": float(np.min(vals["mu_L"])),
    }
    strict = {k: k not in ("mu_0", "mu_L") for k in margins}
    passed = all(m > 0 if strict[k] else m >= 0 for k, m in margins.items())
    return ConditionPReport(passed=passed, margins=margins, strict=strict)


# ---------------------------------------------------------------------------
# Leslie-coefficient relations
# ---------------------------------------------------------------------------

def parodi_residual(alpha1, alpha2, alpha3, alpha4, alpha5, alpha6) -> float:
    """alpha2 + alpha3 - alpha6 + alpha5; zero iff Parodi's relation holds.

    Diagnostic only: nothing in the solver requires this to vanish.
    """
    return alpha2 + alpha3 - alpha6 + alpha5


def leslie_alphas(mu_s, mu_V, mu_D, mu_P, mu_L, mu_0, gamma):
    """Classical Leslie coefficients alpha_1..alpha_6 of this parameterization.

    Valid in the co-rotational normalization mu_V = gamma, where the kinematic
    transport N = D_t d - V d matches the classical convention.  Derived by
    substituting the exchange field into the stretch and dissipative stress
    parts; the Parodi residual of the result is -2 mu_P.
    """
    if abs(mu_V - gamma) > 1e-12 * max(abs(mu_V), abs(gamma), 1.0):
        raise ValueError("alpha correspondence requires mu_V == gamma")
    a2 = -(mu_D + mu_V) / 2.0 - mu_P
    a3 = -(mu_D - mu_V) / 2.0 - mu_P
    a4 = 2.0 * mu_s
    a5 = (mu_D * (mu_D + mu_V) + 2.0 * mu_P * mu_D
          + gamma * mu_L + mu_P ** 2) / (2.0 * gamma)
    a6 = (mu_D * (mu_D - mu_V) + 2.0 * mu_P * mu_D
          + gamma * mu_L + mu_P ** 2) / (2.0 * gamma)
    a1 = mu_0 - (a5 + a6)
    return a1, a2, a3, a4, a5, a6


def simplified_coefficients(gamma: float, lam: float, mu_D: float):
    """(lambda_1, lambda_2) = (-gamma/lam, mu_D/lam) of the classical isothermal model."""
    if lam == 0:
        raise ZeroDivisionError("lam must be nonzero")
    return -gamma / lam, mu_D / lam


def equilibrium_temperature(model: FreeEnergyModel, E0: float, rho: float,
                            volume: float) -> float:
    """Unique root of eps(theta, 0) = E0 / (rho * volume).

    Uniqueness follows from kappa > 0.  Bracket by doubling, then brentq.
    """
    target = E0 / (rho * volume)
    lo, hi = 1e-12, 1.0
    while model.eps(hi, 0.0) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ThermoDomainError(f"energy target {target} outside range of eps(theta, 0)")
    if model.eps(lo, 0.0) > target:
        raise ThermoDomainError(f"energy target {target} outside range of eps(theta, 0)")
    return float(brentq(lambda t: model.eps(t, 0.0) - target, lo, hi, xtol=1e-14, rtol=1e-15))


# ---------------------------------------------------------------------------
# exchange field, stress, heat flux
# ---------------------------------------------------------------------------

def director_exchange_n(div_lambda_grad_d, lam, grad_d, d):
    """Exchange field n = -(div(lam grad d) + lam |grad d|^2 d).

    Obtained by substituting the director equation into the definition
    n = mu_V V d + mu_D P_d D d - gamma D_t d; orthogonal to d for unit fields.
    """
    div_lambda_grad_d = np.asarray(div_lambda_grad_d, dtype=float)
    grad_d = np.asarray(grad_d, dtype=float)
    d = np.asarray(d, dtype=float)
    lam = np.asarray(lam, dtype=float)
    gsq = np.sum(grad_d * grad_d, axis=(-2, -1))
    return -(div_lambda_grad_d + (lam * gsq)[..., None] * d)


@dataclass
class StressParts:
    """The four stress contributions; `total` is their sum."""

    newtonian: np.ndarray
    ericksen: np.ndarray
    stretch: np.ndarray
    dissipative: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.newtonian + self.ericksen + self.stretch + self.dissipative


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def stress_assemble(D, V, d, n_vec, grad_d, cv: Dict[str, np.ndarray], lam) -> StressParts:
    """Full stress tensor from pointwise data.

    cv maps coefficient names to values at (theta, tau); lam is the Ericksen
    tension there.  The bulk-viscosity term is dropped (div u = 0).
    """
    D = np.asarray(D, dtype=float)
    d = np.asarray(d, dtype=float)
    n_vec = np.asarray(n_vec, dtype=float)
    grad_d = np.asarray(grad_d, dtype=float)
    lam = np.asarray(lam, dtype=float)
    gamma = np.asarray(cv["gamma"], dtype=float)
    if np.any(gamma == 0):
        raise ZeroDivisionError("gamma must be nonzero in stress_assemble")
    mu_s, mu_V, mu_D = cv["mu_s"], cv["mu_V"], cv["mu_D"]
    mu_P, mu_L, mu_0 = cv["mu_P"], cv["mu_L"], cv["mu_0"]

    s_n = 2.0 * mu_s[..., None, None] * D

    # grad_d[...,i,j] = d_i d_j / d x_i; (grad_d grad_d^T)_{ik} = sum_j G_ij G_kj
    s_e = -lam[..., None, None] * np.einsum("...ij,...kj->...ik", grad_d, grad_d)

    nd = _outer(n_vec, d)
    dn = _outer(d, n_vec)
    s_st = (((mu_D + mu_V) / (2.0 * gamma))[..., None, None] * nd
            + ((mu_D - mu_V) / (2.0 * gamma))[..., None, None] * dn)

    Dd = np.einsum("...ij,...j->...i", D, d)
    dDd = np.sum(Dd * d, axis=-1)
    PdDd = Dd - dDd[..., None] * d
    s_di = ((mu_P / gamma)[..., None, None] * (nd + dn)
            + ((gamma * mu_L + mu_P ** 2) / (2.0 * gamma))[..., None, None]
            * (_outer(PdDd, d) + _outer(d, PdDd))
            + (mu_0 * dDd)[..., None, None] * _outer(d, d))

    shape = np.broadcast(s_n, s_e, s_st, s_di).shape
    return StressParts(newtonian=np.broadcast_to(s_n, shape).copy(),
                       ericksen=np.broadcast_to(s_e, shape).copy(),
                       stretch=np.broadcast_to(s_st, shape).copy(),
                       dissipative=np.broadcast_to(s_di, shape).copy())


def heat_flux(alpha, grad_theta):
    """Fourier law q = -alpha grad(theta)."""
    alpha = np.asarray(alpha, dtype=float)
    return -alpha[..., None] * np.asarray(grad_theta, dtype=float)
