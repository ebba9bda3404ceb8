"""Time integration of the coupled flow / temperature / director system.

The right-hand side is assembled on a twice-padded copy of the state so that
stress, exchange field, and director tendency are available one ghost ring
beyond the interior; interior derivatives of those quantities then need no
extra boundary handling.

Discrete energy budget (periodic): advection is in skew form, director
diffusion in conservative face-flux form, tau and the Frobenius pairings are
face-based, and the temperature equation carries the commutator of advection
with the director gradient.  With constant heat capacity and affine tension
these choices cancel exactly under summation by parts, so total energy is
conserved to roundoff by the semi-discrete system and the time drift is pure
integrator error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import grid as gops
from .grid import Grid, pad, _dx, _dy, deformation_vorticity, face_tau, \
    helmholtz_project, integrate, norm_l2, divergence
from .thermo import CoefficientSet, FreeEnergyModel, ThermoDomainError, \
    stress_assemble


class BlowUpError(RuntimeError):
    def __init__(self, t_last):
        self.t_last = t_last
        super().__init__(f"non-finite field values; last valid time t={t_last:.6g}")


class PositivityError(RuntimeError):
    def __init__(self, t_last, theta_min):
        self.t_last = t_last
        self.theta_min = theta_min
        super().__init__(f"min theta = {theta_min:.6g} <= 0; last valid time t={t_last:.6g}")


@dataclass
class State:
    u: np.ndarray          # (nx, ny, 2)
    theta: np.ndarray      # (nx, ny), positive
    d: np.ndarray          # (nx, ny, 2)
    pi: np.ndarray         # (nx, ny), mean-zero pressure diagnostic
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.u.copy(), self.theta.copy(), self.d.copy(),
                     self.pi.copy(), self.t)


@dataclass
class DiagnosticsRow:
    t: float
    E_total: float
    N_total: float
    kinetic: float
    internal: float
    max_unit_drift: float
    div_norm: float
    min_theta: float
    dist_to_eq: float

    FIELDS = ("t", "E", "N", "kinetic", "internal", "unit_drift",
              "div_norm", "min_theta", "dist_to_eq")

    def values(self):
        return (self.t, self.E_total, self.N_total, self.kinetic,
                self.internal, self.max_unit_drift, self.div_norm,
                self.min_theta, self.dist_to_eq)


@dataclass
class RunResult:
    rows: list
    final_state: State
    decay_rate: Optional[float]   # fitted exponential rate of dist_to_eq, or None
    n_steps: int
    dt: float


_CORE = (slice(1, -1), slice(1, -1))


class Simulation:
    """RHS assembly and time stepping for a fixed grid / model / coefficients."""

    def __init__(self, grid: Grid, model: FreeEnergyModel,
                 coeffs: CoefficientSet, isothermal: bool = False,
                 renormalize_d: bool = False):
        self.grid = grid
        self.model = model
        self.coeffs = coeffs
        self.isothermal = isothermal
        self.renormalize_d = renormalize_d
        # constant part of the tension, lam(theta) - theta*dlam/dtheta
        self.c_tension = model.lambda_0 - model.b * model.theta_ref

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------
    def _skew_adv(self, uP, fP):
        """Skew-symmetric advection (u.grad f + div(u f))/2.

        Inputs carry one ghost ring relative to the output region.
        """
        hx, hy = self.grid.hx, self.grid.hy
        uc = uP[1:-1, 1:-1]
        if fP.ndim == uP.ndim:          # vector advected field
            ux, uy = uc[..., 0:1], uc[..., 1:2]
            px, py = uP[..., 0:1] * fP, uP[..., 1:2] * fP
        else:
            ux, uy = uc[..., 0], uc[..., 1]
            px, py = uP[..., 0] * fP, uP[..., 1] * fP
        return 0.5 * (ux * _dx(fP, hx) + uy * _dy(fP, hy)
                      + _dx(px, hx) + _dy(py, hy))

    def _prep(self, state: State) -> dict:
        """Everything the tendencies need, on the once-padded (level-1) region."""
        g = self.grid
        hx, hy = g.hx, g.hy
        up = pad(g, state.u, "odd", 2)
        thp = pad(g, state.theta, "even", 2)
        dp = pad(g, state.d, "even", 2)
        if np.min(thp) <= 0.0:
            raise PositivityError(state.t, float(np.min(state.theta)))
        lamp = self.model.lam(thp)

        u1 = up[1:-1, 1:-1]
        th1 = thp[1:-1, 1:-1]
        d1 = dp[1:-1, 1:-1]
        grad_u1 = np.stack([_dx(up, hx), _dy(up, hy)], axis=-2)
        grad_d1 = np.stack([_dx(dp, hx), _dy(dp, hy)], axis=-2)

        # director differences on the faces of the level-1 cells
        dfx = (dp[1:, 1:-1] - dp[:-1, 1:-1]) / hx       # (nx+3, ny+2, 2)
        dfy = (dp[1:-1, 1:] - dp[1:-1, :-1]) / hy       # (nx+2, ny+3, 2)
        lfx = 0.5 * (lamp[1:, 1:-1] + lamp[:-1, 1:-1])
        lfy = 0.5 * (lamp[1:-1, 1:] + lamp[1:-1, :-1])
        if not g.periodic:
            dfx[1] = 0.0
            dfx[-2] = 0.0
            dfy[:, 1] = 0.0
            dfy[:, -2] = 0.0
        sx = np.sum(dfx * dfx, axis=-1)
        sy = np.sum(dfy * dfy, axis=-1)
        tau1 = 0.25 * (sx[1:] + sx[:-1] + sy[:, 1:] + sy[:, :-1])
        Fxf = lfx[..., None] * dfx
        Fyf = lfy[..., None] * dfy
        Ald1 = (Fxf[1:] - Fxf[:-1]) / hx + (Fyf[:, 1:] - Fyf[:, :-1]) / hy

        cv1 = self.coeffs.evaluate(th1, tau1)
        if np.min(cv1["gamma"]) <= 0.0:
            raise ThermoDomainError("gamma <= 0 at some grid point")
        lam1 = lamp[1:-1, 1:-1]

        jac = np.swapaxes(grad_u1, -1, -2)
        Dt, Vt = deformation_vorticity(jac)
        Dd = np.einsum("...ij,...j->...i", Dt, d1)
        Vd = np.einsum("...ij,...j->...i", Vt, d1)
        PdDd = Dd - d1 * np.sum(Dd * d1, axis=-1)[..., None]

        gsq = 2.0 * tau1
        w1 = (cv1["mu_V"][..., None] * Vd + Ald1
              + (lam1 * gsq)[..., None] * d1
              + cv1["mu_D"][..., None] * PdDd) / cv1["gamma"][..., None]
        n1 = -(Ald1 + (lam1 * gsq)[..., None] * d1)
        S1 = stress_assemble(Dt, Vt, d1, n1, grad_d1, cv1, lam1).total

        # the grad(u) half of the Newtonian stress goes through a compact
        # face flux instead; the wide central divergence of a central
        # gradient barely damps grid-scale velocity modes
        mu1 = cv1["mu_s"]
        S1_rest = S1 - mu1[..., None, None] * grad_u1
        ufx = (u1[1:] - u1[:-1]) / hx            # (nx+1, ny+2, 2), walls = friction flux
        ufy = (u1[:, 1:] - u1[:, :-1]) / hy
        msfx = 0.5 * (mu1[1:] + mu1[:-1])
        msfy = 0.5 * (mu1[:, 1:] + mu1[:, :-1])
        Fux = (msfx[..., None] * ufx)[:, 1:-1]
        Fuy = (msfy[..., None] * ufy)[1:-1]
        visc_u = (Fux[1:] - Fux[:-1]) / hx + (Fuy[:, 1:] - Fuy[:, :-1]) / hy
        svx = (msfx * np.sum(ufx * ufx, axis=-1))[:, 1:-1]
        svy = (msfy * np.sum(ufy * ufy, axis=-1))[1:-1]
        visc_heat = 0.5 * (svx[1:] + svx[:-1] + svy[:, 1:] + svy[:, :-1])

        adv_d1 = self._skew_adv(up, dp)      # level-1, for the commutator term

        return dict(up=up, u1=u1, th1=th1, d1=d1, grad_u1=grad_u1,
                    tau1=tau1, dfx=dfx, dfy=dfy, Ald1=Ald1, cv1=cv1,
                    lam1=lam1, w1=w1, n1=n1, S1=S1, S1_rest=S1_rest,
                    visc_u=visc_u, visc_heat=visc_heat, adv_d1=adv_d1)

    def _face_pair(self, p, w1, zero_walls=True):
        """Face-based Frobenius pairing grad(d):grad(w) on the interior."""
        hx, hy = self.grid.hx, self.grid.hy
        wfx = (w1[1:] - w1[:-1]) / hx           # (nx+1, ny+2, 2)
        wfy = (w1[:, 1:] - w1[:, :-1]) / hy
        if not self.grid.periodic and zero_walls:
            wfx[0] = 0.0
            wfx[-1] = 0.0
            wfy[:, 0] = 0.0
            wfy[:, -1] = 0.0
        sx = np.sum(p["dfx"][1:-1, 1:-1] * wfx[:, 1:-1], axis=-1)
        sy = np.sum(p["dfy"][1:-1, 1:-1] * wfy[1:-1], axis=-1)
        return 0.5 * (sx[1:] + sx[:-1] + sy[:, 1:] + sy[:, :-1])

    # -- public tendency pieces ----------------------------------------
    def director_rhs(self, state: State, _prep: Optional[dict] = None) -> np.ndarray:
        """Material derivative of d (before subtracting advection)."""
        p = _prep or self._prep(state)
        return p["w1"][_CORE]

    def momentum_rhs(self, state: State, S: Optional[np.ndarray] = None,
                     _prep: Optional[dict] = None) -> np.ndarray:
        """Pre-projection tendency of u."""
        p = _prep or self._prep(state)
        hx, hy = self.grid.hx, self.grid.hy
        if S is None:
            S1 = p["S1_rest"]
            extra = p["visc_u"]
        else:
            S1 = pad(self.grid, S, "even")
            extra = 0.0
        div_S = _dx(S1[..., 0, :], hx) + _dy(S1[..., 1, :], hy)
        adv_u = self._skew_adv(p["up"][1:-1, 1:-1], p["up"][1:-1, 1:-1])
        return -adv_u + (div_S + extra) / self.coeffs.rho

    def temperature_rhs(self, state: State, Dtd: Optional[np.ndarray] = None,
                        S: Optional[np.ndarray] = None,
                        _prep: Optional[dict] = None) -> np.ndarray:
        p = _prep or self._prep(state)
        g = self.grid
        hx, hy = g.hx, g.hy
        th1, u1 = p["th1"], p["u1"]
        w_int = p["w1"][_CORE] if Dtd is None else Dtd
        if S is None:
            S_int = p["S1_rest"][_CORE]
            visc_heat = p["visc_heat"]
        else:
            S_int = S
            visc_heat = 0.0

        adv_th = self._skew_adv(u1, th1)

        # heat diffusion, conservative face flux
        al = p["cv1"]["alpha"]
        afx = 0.5 * (al[1:, 1:-1] + al[:-1, 1:-1])
        afy = 0.5 * (al[1:-1, 1:] + al[1:-1, :-1])
        qx = afx * (th1[1:, 1:-1] - th1[:-1, 1:-1]) / hx
        qy = afy * (th1[1:-1, 1:] - th1[1:-1, :-1]) / hy
        if not g.periodic:
            qx[0] = 0.0
            qx[-1] = 0.0
            qy[:, 0] = 0.0
            qy[:, -1] = 0.0
        heat = (qx[1:] - qx[:-1]) / hx + (qy[:, 1:] - qy[:, :-1]) / hy

        s_work = np.einsum("...ij,...ij->...", S_int, p["grad_u1"][_CORE])
        ald_w = np.sum(p["Ald1"][_CORE] * w_int, axis=-1)
        f_dw = self._face_pair(p, p["w1"])
        # advection does not commute with the director gradient; this pairs
        # the transported gradient energy with the resolved advection so the
        # elastic part of the energy budget closes exactly
        f_dadv = self._face_pair(p, p["adv_d1"])
        adv_tau = self._skew_adv(u1, p["tau1"])
        commut = self.c_tension * (f_dadv - adv_tau)

        th_int = th1[_CORE]
        rho_kappa = self.coeffs.rho * self.model.c_v
        return -adv_th + (heat + s_work + visc_heat + ald_w
                          + self.model.b * th_int * f_dw + commut) / rho_kappa

    def full_rhs(self, state: State):
        """(u_dot projected, theta_dot, d_dot, pi); D_t d computed once."""
        p = self._prep(state)
        mom = self.momentum_rhs(state, _prep=p)
        u_dot, phi = helmholtz_project(self.grid, mom)
        if self.isothermal:
            th_dot = np.zeros_like(state.theta)
        else:
            th_dot = self.temperature_rhs(state, _prep=p)
        d_dot = p["w1"][_CORE] - p["adv_d1"][_CORE]
        return u_dot, th_dot, d_dot, self.coeffs.rho * phi

    # ------------------------------------------------------------------
    # time stepping
    # ------------------------------------------------------------------
    def step(self, state: State, dt: float, scheme: str = "rk4") -> State:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if scheme == "rk4":
            new = self._step_rk4(state, dt)
        elif scheme == "imex":
            new = self._step_imex(state, dt)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if self.renormalize_d:
            new.d /= np.linalg.norm(new.d, axis=-1, keepdims=True)
        if not (np.all(np.isfinite(new.u)) and np.all(np.isfinite(new.theta))
                and np.all(np.isfinite(new.d))):
            raise BlowUpError(state.t)
        tmin = float(np.min(new.theta))
        if tmin <= 0.0:
            raise PositivityError(state.t, tmin)
        return new

    def _step_rk4(self, state: State, dt: float) -> State:
        def shifted(c, ks):
            return State(state.u + c * ks[0], state.theta + c * ks[1],
                         state.d + c * ks[2], state.pi, state.t + c)

        k1 = self.full_rhs(state)
        k2 = self.full_rhs(shifted(0.5 * dt, k1))
        k3 = self.full_rhs(shifted(0.5 * dt, k2))
        k4 = self.full_rhs(shifted(dt, k3))
        u = state.u + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        th = state.theta + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        d = state.d + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        return State(u, th, d, k1[3], state.t + dt)

    def _implicit_diffusion(self, rhs, weight, coeff, parity, dt):
        """CG solve of (W - dt * div(coeff grad)) v = W * rhs, componentwise."""
        g = self.grid
        shape = rhs.shape

        def apply(vflat):
            v = vflat.reshape(shape)
            av = gops.div_lambda_grad(g, v, coeff, parity=parity)
            return (weight[..., None] * v - dt * av if v.ndim == 3
                    else weight * v - dt * av).ravel()

        b = (weight[..., None] * rhs if rhs.ndim == 3 else weight * rhs).ravel()
        op = LinearOperator((b.size, b.size), matvec=apply)
        x, info = cg(op, b, x0=rhs.ravel(), rtol=1e-12, atol=1e-12 * max(np.linalg.norm(b), 1e-300),
                     maxiter=20000)
        if info != 0:
            raise gops.SolverError(f"implicit diffusion CG failed (info={info})")
        return x.reshape(shape)

    def _step_imex(self, state: State, dt: float) -> State:
        """First-order splitting: diffusion backward Euler, the rest explicit."""
        g = self.grid
        tau = face_tau(g, state.d)
        cv = self.coeffs.evaluate(state.theta, tau)
        lam = self.model.lam(state.theta)
        rho = self.coeffs.rho
        rk = rho * self.model.c_v

        u_dot, th_dot, d_dot, pi = self.full_rhs(state)
        mu = cv["mu_s"]
        lu = gops.div_lambda_grad(g, state.u, mu, parity="odd") / rho
        lth = gops.div_lambda_grad(g, state.theta, cv["alpha"]) / rk
        ld = gops.div_lambda_grad(g, state.d, lam) / cv["gamma"][..., None]

        u_star = state.u + dt * (u_dot - lu)
        d_star = state.d + dt * (d_dot - ld)
        u_new = self._implicit_diffusion(u_star, np.full_like(state.theta, rho),
                                         mu, "odd", dt)
        u_new, phi = helmholtz_project(g, u_new)
        d_new = self._implicit_diffusion(d_star, cv["gamma"], lam, "even", dt)
        if self.isothermal:
            th_new = state.theta
        else:
            th_star = state.theta + dt * (th_dot - lth)
            th_new = self._implicit_diffusion(th_star,
                                              np.full_like(state.theta, rk),
                                              cv["alpha"], "even", dt)
        return State(u_new, th_new, d_new, rho * phi / dt, state.t + dt)

    # ------------------------------------------------------------------
    # initial data and diagnostics
    # ------------------------------------------------------------------
    def _smooth_scalar(self, rng, nmodes=3):
        g = self.grid
        X, Y = g.cell_centers()
        f = np.zeros((g.nx, g.ny))
        for kx in range(nmodes + 1):
            for ky in range(nmodes + 1):
                if kx == 0 and ky == 0:
                    continue
                a, bb = rng.standard_normal(2) / (1 + kx * kx + ky * ky)
                if g.periodic:
                    f += a * np.sin(2 * np.pi * (kx * X / g.lx + ky * Y / g.ly))
                    f += bb * np.cos(2 * np.pi * (kx * X / g.lx + ky * Y / g.ly))
                else:
                    f += a * np.cos(np.pi * kx * X / g.lx) * np.cos(np.pi * ky * Y / g.ly)
        m = np.max(np.abs(f))
        return f / m if m > 0 else f

    def _smooth_velocity(self, rng):
        """Divergence-free-ish field from a streamfunction, then projected."""
        g = self.grid
        X, Y = g.cell_centers()
        if g.periodic:
            psi = self._smooth_scalar(rng)
        else:
            # envelope kills the velocity at the walls
            env = (np.sin(np.pi * X / g.lx) * np.sin(np.pi * Y / g.ly)) ** 2
            psi = env * self._smooth_scalar(rng)
        gp = gops.gradient(g, psi)
        u = np.stack([gp[..., 1], -gp[..., 0]], axis=-1)
        if g.periodic:
            u -= u.mean(axis=(0, 1))
        u, _ = helmholtz_project(g, u)
        m = np.max(np.abs(u))
        return u / m if m > 0 else u

    def initial_data(self, kind: str, amplitude: float, seed: int = 0) -> State:
        if amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        g = self.grid
        rng = np.random.default_rng(seed)
        theta0 = self.model.theta_ref
        X, Y = g.cell_centers()
        zeros_v = np.zeros((g.nx, g.ny, 2))

        if kind == "eq_perturb" or kind == "random_smooth":
            th_pert = self._smooth_scalar(rng)
            p2 = self._smooth_scalar(rng)
            p3 = self._smooth_scalar(rng)
            u = amplitude * self._smooth_velocity(rng) if amplitude > 0 else zeros_v
            theta = theta0 * (1.0 + amplitude * th_pert)
            d = np.zeros((g.nx, g.ny, 2))
            d[..., 0] = 1.0 + amplitude * p2
            d[..., 1] = amplitude * p3
        elif kind == "taylor_green_director":
            kx, ky = 2 * np.pi / g.lx, 2 * np.pi / g.ly
            if g.periodic:
                u = amplitude * np.stack([np.sin(kx * X) * np.cos(ky * Y),
                                          -np.cos(kx * X) * np.sin(ky * Y)],
                                         axis=-1)
                u, _ = helmholtz_project(g, u)
            else:
                u = amplitude * self._smooth_velocity(rng)
            if g.periodic:
                phi = amplitude * np.cos(kx * X) * np.cos(ky * Y)
            else:
                phi = amplitude * np.cos(np.pi * X / g.lx) * np.cos(np.pi * Y / g.ly)
            d = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
            theta = np.full((g.nx, g.ny), theta0)
        else:
            raise ValueError(f"unknown initial data kind {kind!r}")

        # enforce the constructive postconditions exactly
        floor = 0.5 * theta0
        tmin = float(np.min(theta))
        if tmin < floor:
            theta = theta0 + (theta - theta0) * (0.49 * theta0 / (theta0 - tmin))
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        if amplitude > 0:
            if g.periodic:
                u = u - u.mean(axis=(0, 1))
            u, _ = helmholtz_project(g, u)
        return State(u=u, theta=theta, d=d, pi=np.zeros((g.nx, g.ny)), t=0.0)

    def diagnostics(self, state: State) -> DiagnosticsRow:
        g = self.grid
        rho = self.coeffs.rho
        tau = face_tau(g, state.d)
        eps = self.model.eps(state.theta, tau)
        eta = self.model.eta(state.theta, tau)
        kinetic = 0.5 * rho * integrate(g, np.sum(state.u ** 2, axis=-1))
        internal = rho * integrate(g, eps)
        d2 = np.sum(state.d ** 2, axis=-1)
        dist = (norm_l2(g, state.u)
                + norm_l2(g, state.theta - state.theta.mean())
                + norm_l2(g, state.d - state.d.mean(axis=(0, 1))))
        return DiagnosticsRow(
            t=state.t,
            E_total=kinetic + internal,
            N_total=rho * integrate(g, eta),
            kinetic=kinetic,
            internal=internal,
            max_unit_drift=float(np.max(np.abs(d2 - 1.0))),
            div_norm=norm_l2(g, divergence(g, state.u, parity="odd")),
            min_theta=float(np.min(state.theta)),
            dist_to_eq=dist,
        )


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def fit_decay_rate(rows, window: float = 0.5):
    """Exponential rate of dist_to_eq over the trailing time window (fraction)."""
    ts = np.array([r.t for r in rows])
    ds = np.array([r.dist_to_eq for r in rows])
    if len(ts) < 3 or ts[-1] <= ts[0]:
        return None
    t_cut = ts[-1] - window * (ts[-1] - ts[0])
    sel = (ts >= t_cut) & (ds > 1e-14)
    if np.count_nonzero(sel) < 3:
        return None
    slope = np.polyfit(ts[sel], np.log(ds[sel]), 1)[0]
    return float(-slope)


def run(cfg, outdir=None, state0: Optional[State] = None) -> RunResult:
    """Advance a configured simulation to t_final, collecting diagnostics."""
    sim = Simulation(cfg.grid, cfg.model, cfg.coeffs,
                     isothermal=cfg.flags.isothermal,
                     renormalize_d=cfg.flags.renormalize_d)
    state = state0 if state0 is not None else sim.initial_data(
        cfg.initial.kind, cfg.initial.amplitude, cfg.initial.seed)
    dt = cfg.resolved_dt()
    n_steps = max(1, math.ceil(cfg.time.t_final / dt - 1e-12))
    dt = cfg.time.t_final / n_steps
    rows = [sim.diagnostics(state)]
    snap_every = cfg.outputs.snapshot_every

    def snap(step, st):
        if outdir is None or not cfg.outputs.snapshots:
            return
        for name, arr in (("u", st.u), ("theta", st.theta), ("d", st.d)):
            gops.write_snapshot(f"{outdir}/snap_{step:06d}_{name}.elf2", arr)

    snap(0, state)
    for k in range(1, n_steps + 1):
        state = sim.step(state, dt, cfg.time.scheme)
        if k % cfg.time.diag_every == 0 or k == n_steps:
            rows.append(sim.diagnostics(state))
        if snap_every and (k % snap_every == 0 or k == n_steps):
            snap(k, state)
    if snap_every == 0:
        snap(n_steps, state)
    return RunResult(rows=rows, final_state=state,
                     decay_rate=fit_decay_rate(rows), n_steps=n_steps, dt=dt)
