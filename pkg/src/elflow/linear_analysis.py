"""Frozen-coefficient symbol algebra and the discrete equilibrium spectrum.

Symbols are assembled with bilinear (unconjugated) products throughout, so
substituting a complex wavevector is the analytic continuation needed by the
half-space boundary determinant.  The spatial dimension n is generic (2 or 3);
the discrete linearization pieces are 2D like the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .grid import helmholtz_project
from .simulator import Simulation, State


class SingularSymbolError(ArithmeticError):
    """Schur determinant vanished; positivity assumptions violated or (z, xi) = 0."""


class StructureError(RuntimeError):
    """Stable subspace of the boundary ODE has the wrong dimension."""


@dataclass(frozen=True)
class FrozenCoefficients:
    n: int = 2
    rho: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0
    lambda1: float = 0.0       # d(lam)/d(tau) at the freezing point
    b: float = 0.0             # d(lam)/d(theta)
    theta0: float = 1.0
    d0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    grad_d0: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    mu_s: float = 1.0
    mu_V: float = 1.0
    mu_D: float = 1.0
    mu_P: float = 0.0
    mu_L: float = 0.0
    mu_0: float = 0.0

    def __post_init__(self):
        d0 = np.asarray(self.d0, dtype=float)
        g0 = np.asarray(self.grad_d0, dtype=float)
        object.__setattr__(self, "d0", d0)
        object.__setattr__(self, "grad_d0", g0)
        if d0.shape != (self.n,) or g0.shape != (self.n, self.n):
            raise ValueError("d0 / grad_d0 shapes must match n")
        if abs(np.dot(d0, d0) - 1.0) > 1e-12:
            raise ValueError("d0 must be a unit vector")
        for name in ("rho", "kappa", "alpha", "gamma", "lam", "theta0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        tau = 0.5 * np.sum(g0 * g0)
        if self.lam + 2.0 * tau * self.lambda1 <= 0:
            raise ValueError("lam + 2 tau lambda1 must be positive")

    @classmethod
    def from_model(cls, model, coeffs, theta: float, d0, grad_d0):
        grad_d0 = np.asarray(grad_d0, dtype=float)
        tau = 0.5 * float(np.sum(grad_d0 * grad_d0))
        vals = coeffs.evaluate(theta, tau)
        return cls(n=len(d0), rho=coeffs.rho, kappa=float(model.kappa(theta)),
                   alpha=float(vals["alpha"]), gamma=float(vals["gamma"]),
                   lam=float(model.lam(theta)),
                   lambda1=float(model.dlambda_dtau(theta)),
                   b=float(model.dlambda_dtheta(theta)), theta0=theta,
                   d0=np.asarray(d0, dtype=float), grad_d0=grad_d0,
                   mu_s=float(vals["mu_s"]), mu_V=float(vals["mu_V"]),
                   mu_D=float(vals["mu_D"]), mu_P=float(vals["mu_P"]),
                   mu_L=float(vals["mu_L"]), mu_0=float(vals["mu_0"]))


def _outer(a, b):
    return np.multiply.outer(a, b)


def symbol_blocks(fc: FrozenCoefficients, z, xi) -> dict:
    """All matrix blocks at frequency z and (possibly complex) wavevector xi."""
    xi = np.asarray(xi)
    d0 = fc.d0
    I = np.eye(fc.n)
    P0 = I - _outer(d0, d0)
    a = xi @ fc.grad_d0                 # a(xi)_j = xi_i (grad d0)_ij
    xd = xi @ d0                        # bilinear, no conjugation
    xi2 = xi @ xi
    P0xi = P0 @ xi

    R = xd * P0 + _outer(P0xi, d0)
    mu_p = fc.mu_D + fc.mu_V + fc.mu_P
    mu_m = fc.mu_D - fc.mu_V + fc.mu_P
    R_mu = mu_m * xd * P0 + mu_p * _outer(P0xi, d0)
    R_0 = 0.5 * (fc.mu_D + fc.mu_V) * _outer(P0xi, d0) \
        + 0.5 * (fc.mu_D - fc.mu_V) * xd * P0
    R_1 = R_mu - R_0

    m_theta = fc.rho * fc.kappa * z + fc.alpha * xi2
    m_d = fc.gamma * z + fc.lam * xi2
    M_d = m_d * I + fc.lambda1 * _outer(a, a)
    M_u = (fc.rho * z + fc.mu_s * xi2) * I \
        + fc.mu_0 * xd ** 2 * _outer(d0, d0) \
        + 0.25 * fc.mu_L * (R.T @ R) \
        + (0.25 / fc.gamma) * (R_mu.T @ R_mu) \
        + (0.5 * fc.mu_P * fc.mu_V / fc.gamma) * xd * (R - R.T)
    return dict(M_u=M_u, m_theta=m_theta, M_d=M_d, R_0=R_0, R_1=R_1,
                a=a, R=R, R_mu=R_mu, m_d=m_d, xd=xd, xi2=xi2, P0=P0)


def symbol_L(fc: FrozenCoefficients, z, xi, b_sign: int = 1) -> np.ndarray:
    """(2n+1)x(2n+1) parabolic principal symbol, blocks (u, theta, d).

    b_sign flips the sign of both temperature/director coupling entries that
    carry b; the two published block layouts disagree there and the flag keeps
    both on hand.  All positivity checks are insensitive to it.
    """
    blk = symbol_blocks(fc, z, xi)
    n = fc.n
    m = 2 * n + 1
    L = np.zeros((m, m), dtype=complex)
    s = 1 if b_sign >= 0 else -1
    L[:n, :n] = blk["M_u"]
    L[:n, n + 1:] = 1j * z * blk["R_1"].T
    L[n, n] = blk["m_theta"]
    L[n, n + 1:] = s * 1j * z * fc.theta0 * fc.b * blk["a"]
    L[n + 1:, :n] = -1j * blk["R_0"]
    L[n + 1:, n] = s * 1j * fc.b * blk["a"]
    L[n + 1:, n + 1:] = blk["M_d"]
    return L


def accretivity(fc: FrozenCoefficients, z, xi, v, b_sign: int = 1) -> dict:
    """Weighted quadratic form Re(Lv|Jv), J = diag(I, 1/theta0, z I).

    Returns the form value and the components of the lower bound
    Re z (|u|^2+|theta|^2+|xi|^2|d|^2) + |xi|^2(|u|^2+|theta|^2)
    + (2 gamma |z| |d| - |R_mu u|)^2.
    """
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(v, dtype=complex)
    n = fc.n
    L = symbol_L(fc, z, xi, b_sign)
    Lv = L @ v
    u, th, d = v[:n], v[n], v[n + 1:]
    lhs = np.real(np.vdot(u, Lv[:n])            # vdot conjugates its 1st arg
                  + np.conj(th) * Lv[n] / fc.theta0
                  + np.conj(z) * np.vdot(d, Lv[n + 1:]))
    xi2 = float(xi @ xi)
    u2, th2, d2 = np.vdot(u, u).real, abs(th) ** 2, np.vdot(d, d).real
    R_mu = symbol_blocks(fc, z, xi)["R_mu"]
    c1 = np.real(z) * (u2 + th2 + xi2 * d2)
    c2 = xi2 * (u2 + th2)
    c3 = (2.0 * fc.gamma * abs(z) * np.sqrt(d2)
          - np.linalg.norm(R_mu @ u)) ** 2
    return dict(lhs=float(lhs), bound=float(c1 + c2 + c3),
                components=(float(c1), float(c2), float(c3)))


def schur_theta_d(fc: FrozenCoefficients, z, xi, f_theta, f_d, u,
                  b_sign: int = 1) -> dict:
    """Closed-form solve of the (theta, d) block rows given the u column."""
    blk = symbol_blocks(fc, z, np.asarray(xi, dtype=float))
    a, m_d, m_theta = blk["a"], blk["m_d"], blk["m_theta"]
    asq = float(a @ a)
    s = 1 if b_sign >= 0 else -1
    det = m_theta * (m_d + fc.lambda1 * asq) + z * fc.theta0 * fc.b ** 2 * asq
    scale = max(abs(m_theta * m_d), abs(z) * fc.theta0 * fc.b ** 2 * asq, 1e-30)
    if abs(det) < 1e-14 * scale:
        raise SingularSymbolError(f"Schur determinant {det:.3e} ~ 0")
    g = np.asarray(f_d, dtype=complex) + 1j * blk["R_0"] @ np.asarray(u, dtype=complex)
    ga = g @ a
    theta = ((m_d + fc.lambda1 * asq) * f_theta
             - s * 1j * z * fc.theta0 * fc.b * ga) / det
    delta = (-s * 1j * fc.b * asq * f_theta + m_theta * ga) / det
    d = (g - s * 1j * fc.b * theta * a - fc.lambda1 * delta * a) / m_d
    return dict(theta=theta, delta=delta, d=d, det=det)


def stokes_symbol(fc: FrozenCoefficients, z, xi) -> dict:
    """Effective velocity symbol after eliminating (theta, d), plus its margin."""
    xi = np.asarray(xi, dtype=float)
    blk = symbol_blocks(fc, z, xi)
    a, m_d, m_theta = blk["a"], blk["m_d"], blk["m_theta"]
    asq = float(a @ a)
    det = m_theta * (m_d + fc.lambda1 * asq) + z * fc.theta0 * fc.b ** 2 * asq
    I = np.eye(fc.n)
    if asq > 0:
        Q = _outer(a, a) / asq
    else:
        Q = np.zeros((fc.n, fc.n))
    P = I - Q
    if abs(det) < 1e-14 * max(abs(m_theta * m_d), 1e-30):
        raise SingularSymbolError(f"Schur determinant {det:.3e} ~ 0")
    M = blk["M_u"] - z * blk["R_1"].T @ (P / m_d + (m_theta / det) * Q) @ blk["R_0"]
    herm = 0.5 * (M + M.conj().T)
    lo = float(np.min(np.linalg.eigvalsh(herm)))
    margin = lo - (fc.rho * np.real(z) + fc.mu_s * float(xi @ xi))
    return dict(M=M, ellipticity_margin=margin)


# ---------------------------------------------------------------------------
# half-space boundary determinant
# ---------------------------------------------------------------------------

def lopatinskii_determinant(fc: FrozenCoefficients, z, xi_tangential, nu,
                            b_sign: int = 1) -> complex:
    """Boundary determinant of the half-line ODE system L(z, i(xi - i nu dy)) v = 0.

    Decaying solutions are spanned by the stable subspace of the companion
    linearization; the returned determinant tests the boundary rows
    (u = 0, normal derivative of theta and d = 0) on an orthonormal basis of
    that subspace, so its magnitude is basis-independent.
    """
    xi_t = np.asarray(xi_tangential, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(float(xi_t @ nu)) > 1e-12:
        raise ValueError("xi_tangential must be orthogonal to nu")
    n = fc.n
    m = 2 * n + 1

    def Lk(kappa):
        return symbol_L(fc, z, xi_t - 1j * kappa * nu, b_sign)

    L0, Lp, Lm = Lk(0.0), Lk(1.0), Lk(-1.0)
    A0 = L0
    A1 = 0.5 * (Lp - Lm)
    A2 = 0.5 * (Lp + Lm) - L0

    C = np.zeros((2 * m, 2 * m), dtype=complex)
    C[:m, m:] = np.eye(m)
    A2inv = np.linalg.inv(A2)
    C[m:, :m] = -A2inv @ A0
    C[m:, m:] = -A2inv @ A1

    T, Z, sdim = scipy.linalg.schur(C, output="complex",
                                    sort=lambda lam: lam.real < 0)
    if sdim != m:
        raise StructureError(f"stable subspace has dimension {sdim}, expected {m}")
    basis = Z[:, :m]                      # orthonormal, Gram determinant 1

    B = np.zeros((m, m), dtype=complex)
    B[:n] = basis[:n]                     # u(0) = 0
    B[n] = basis[m + n]                   # theta'(0) = 0
    B[n + 1:] = basis[m + n + 1:]         # d'(0) = 0
    return complex(np.linalg.det(B))


# ---------------------------------------------------------------------------
# discrete linearization at equilibrium
# ---------------------------------------------------------------------------

def _flatten(u, theta, d):
    return np.concatenate([u.ravel(), theta.ravel(), d.ravel()])


def linearize_at_equilibrium(cfg, grid=None, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the full tendency map at equilibrium."""
    g = grid if grid is not None else cfg.grid
    sim = Simulation(g, cfg.model, cfg.coeffs, isothermal=cfg.flags.isothermal)
    st0 = sim.initial_data("eq_perturb", 0.0, 0)
    ncell = g.nx * g.ny
    dim = 5 * ncell

    def rhs_of(x):
        u = x[:2 * ncell].reshape(g.nx, g.ny, 2)
        theta = x[2 * ncell:3 * ncell].reshape(g.nx, g.ny)
        d = x[3 * ncell:].reshape(g.nx, g.ny, 2)
        ud, td, dd, _ = sim.full_rhs(State(u, theta, d, st0.pi, 0.0))
        return _flatten(ud, td, dd)

    x0 = _flatten(st0.u, st0.theta, st0.d)
    A = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        col = (rhs_of(x0 + e) - rhs_of(x0 - e)) / (2.0 * step)
        if not np.all(np.isfinite(col)):
            raise FloatingPointError(f"non-finite Jacobian column {j}")
        A[:, j] = col
    return A


def _solenoidal_basis(g) -> np.ndarray:
    """Orthonormal basis of the projected-velocity + theta + d state space.

    On periodic grids the Nyquist checkerboard velocity patterns have
    identically zero central-difference symbol: undamped, unforced grid
    artifacts of the collocated discretization.  They are excluded along
    with the discrete-gradient directions.
    """
    ncell = g.nx * g.ny
    dim = 5 * ncell
    P = np.zeros((dim, 2 * ncell))
    for j in range(2 * ncell):
        e = np.zeros(2 * ncell)
        e[j] = 1.0
        pu, _ = helmholtz_project(g, e.reshape(g.nx, g.ny, 2))
        P[:2 * ncell, j] = pu.ravel()
    U, s, _ = np.linalg.svd(P, full_matrices=False)
    Bu = U[:, s > 0.5]
    if g.periodic:
        ix, iy = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
        spurious = []
        for patt in ((-1.0) ** ix, (-1.0) ** iy, (-1.0) ** (ix + iy)):
            for comp in (0, 1):
                v = np.zeros((g.nx, g.ny, 2))
                v[..., comp] = patt
                full = np.zeros(dim)
                full[:2 * ncell] = v.ravel() / np.linalg.norm(v)
                spurious.append(full)
        M = np.array(spurious).T
        Bu = Bu - M @ (M.T @ Bu)
        U2, s2, _ = np.linalg.svd(Bu, full_matrices=False)
        Bu = U2[:, s2 > 0.5]
    B = np.zeros((dim, Bu.shape[1] + 3 * ncell))
    B[:, :Bu.shape[1]] = Bu
    B[2 * ncell:, Bu.shape[1]:] = np.eye(3 * ncell)
    return B


def spectrum_check(A: np.ndarray, grid, kernel_tol: float = 1e-6) -> dict:
    """Eigenvalues of the tendency generator on the physical state space.

    The raw Jacobian acts on unconstrained (u, theta, d) vectors; velocity
    directions that are pure discrete gradients are projected out before the
    eigensolve, since the dynamics never leave the divergence-free subspace.
    """
    B = _solenoidal_basis(grid)
    Ar = B.T @ A @ B
    scale = np.linalg.norm(Ar, 2)
    eig = np.linalg.eigvals(Ar)
    thresh = kernel_tol * scale
    near_zero = np.abs(eig) <= thresh
    kernel_dim = int(np.count_nonzero(near_zero))
    rest = eig[~near_zero]
    gap = float(-np.max(rest.real)) if rest.size else np.inf

    # semi-simplicity of the zero cluster: order the Schur form so the
    # near-zero eigenvalues lead, then the leading block must vanish
    T, _, sdim = scipy.linalg.schur(Ar.astype(complex), output="complex",
                                    sort=lambda lam: abs(lam) <= thresh)
    T11 = T[:sdim, :sdim]
    semi_simple = bool(np.linalg.norm(T11, 2) <= 10.0 * thresh)
    return dict(eigenvalues=eig, kernel_dim=kernel_dim, spectral_gap=gap,
                semi_simple=semi_simple, kernel_threshold=thresh)
