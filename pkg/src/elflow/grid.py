"""Discrete fields on a 2D cell-centered rectangular grid.

Conventions
-----------
Arrays are indexed [ix, iy] with cell centers at ((ix+1/2)hx, (iy+1/2)hy).
Scalars have shape (nx, ny), vectors (nx, ny, 2), tensors (nx, ny, 2, 2).
The gradient carries its derivative index FIRST: grad(f)[..., i] = d f / d x_i
and grad(d)[..., i, j] = d d_j / d x_i.  divergence contracts the first
tensor index, so that <grad f, F> + <f, div F> = 0 holds to roundoff on
periodic grids (summation by parts of the central stencil).

Boundary conditions ("bounded") are realized by ghost cells: even reflection
for homogeneous Neumann quantities (theta, d, scalars) and odd reflection for
quantities vanishing on the wall (velocity components).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg


class SolverError(RuntimeError):
    """Iterative solver failed to reach its tolerance."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc: str = "periodic"

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs nx, ny >= 8")
        if self.bc not in ("periodic", "bounded"):
            raise ValueError(f"unknown bc {self.bc!r}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")


# ---------------------------------------------------------------------------
# ghost-cell padding
# ---------------------------------------------------------------------------

def pad(grid: Grid, f: np.ndarray, parity: str = "even", width: int = 1) -> np.ndarray:
    """Extend f by `width` ghost layers along both grid axes.

    parity 'even': mirror (homogeneous Neumann); 'odd': negated mirror (zero
    wall value).  Ignored for periodic grids.
    """
    w = width
    pw = [(w, w), (w, w)] + [(0, 0)] * (f.ndim - 2)
    if grid.periodic:
        return np.pad(f, pw, mode="wrap")
    g = np.pad(f, pw, mode="symmetric")
    if parity == "odd":
        g[:w] = -g[:w]
        g[-w:] = -g[-w:]
        g[:, :w] = -g[:, :w]
        g[:, -w:] = -g[:, -w:]
        if w > 1:  # corners were double-negated
            g[:w, :w] = -g[:w, :w]
            g[:w, -w:] = -g[:w, -w:]
            g[-w:, :w] = -g[-w:, :w]
            g[-w:, -w:] = -g[-w:, -w:]
    elif parity != "even":
        raise ValueError(f"unknown parity {parity!r}")
    return g


def _dx(p: np.ndarray, hx: float) -> np.ndarray:
    """Central x-derivative of a once-padded array; returns interior shape."""
    return (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * hx)


def _dy(p: np.ndarray, hy: float) -> np.ndarray:
    return (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * hy)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

def gradient(grid: Grid, f: np.ndarray, parity: str = "even") -> np.ndarray:
    """Central-difference gradient, one rank higher, derivative index first."""
    p = pad(grid, f, parity)
    return np.stack([_dx(p, grid.hx), _dy(p, grid.hy)], axis=-f.ndim + 1 if f.ndim > 2 else -1)


def divergence(grid: Grid, F: np.ndarray, parity: str = "even") -> np.ndarray:
    """Central-difference divergence contracting the first component index."""
    p = pad(grid, F, parity)
    if F.ndim == 3:  # vector -> scalar
        return _dx(p[..., 0], grid.hx) + _dy(p[..., 1], grid.hy)
    if F.ndim == 4:  # tensor -> vector, (div F)_j = d_i F_ij
        return _dx(p[..., 0, :], grid.hx) + _dy(p[..., 1, :], grid.hy)
    raise ValueError("divergence expects a vector or tensor field")


def laplacian(grid: Grid, f: np.ndarray, parity: str = "even") -> np.ndarray:
    """Compact 5-point Laplacian (the flux form with unit coefficient)."""
    p = pad(grid, f, parity)
    c = p[1:-1, 1:-1]
    return ((p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / grid.hx ** 2
            + (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / grid.hy ** 2)


def div_lambda_grad(grid: Grid, d: np.ndarray, lam: np.ndarray,
                    parity: str = "even") -> np.ndarray:
    """Conservative div(lam grad d), componentwise, lam averaged onto faces.

    Reduces to lam * laplacian(d) for constant lam.  Works for scalar or
    vector d.
    """
    p = pad(grid, d, parity)
    lp = pad(grid, lam, "even")
    if d.ndim == 3:
        lp = lp[..., None]
    lxf = 0.5 * (lp[1:, 1:-1] + lp[:-1, 1:-1])     # x-faces, shape (nx+1, ny, ...)
    lyf = 0.5 * (lp[1:-1, 1:] + lp[1:-1, :-1])
    fx = lxf * (p[1:, 1:-1] - p[:-1, 1:-1]) / grid.hx
    fy = lyf * (p[1:-1, 1:] - p[1:-1, :-1]) / grid.hy
    if not grid.periodic:
        # zero flux through the walls (homogeneous Neumann)
        fx[0] = 0.0
        fx[-1] = 0.0
        fy[:, 0] = 0.0
        fy[:, -1] = 0.0
    return (fx[1:] - fx[:-1]) / grid.hx + (fy[:, 1:] - fy[:, :-1]) / grid.hy


def face_tau(grid: Grid, d: np.ndarray) -> np.ndarray:
    """Half squared director-gradient norm from face differences.

    tau at a cell averages the squared one-sided differences over its four
    faces; this is the discrete tau whose exact chain rule pairs with the
    conservative div(lam grad d) in the energy bookkeeping.
    """
    p = pad(grid, d, "even")
    dfx = (p[1:, 1:-1] - p[:-1, 1:-1]) / grid.hx
    dfy = (p[1:-1, 1:] - p[1:-1, :-1]) / grid.hy
    if not grid.periodic:
        dfx[0] = 0.0
        dfx[-1] = 0.0
        dfy[:, 0] = 0.0
        dfy[:, -1] = 0.0
    sx = np.sum(dfx * dfx, axis=-1) if d.ndim == 3 else dfx * dfx
    sy = np.sum(dfy * dfy, axis=-1) if d.ndim == 3 else dfy * dfy
    return 0.25 * (sx[1:] + sx[:-1] + sy[:, 1:] + sy[:, :-1])


def face_frobenius(grid: Grid, d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Face-based grad(d) : grad(w), the bilinear form whose quadratic case is 2 face_tau."""
    pd = pad(grid, d, "even")
    pw = pad(grid, w, "even")
    dfx = (pd[1:, 1:-1] - pd[:-1, 1:-1]) / grid.hx
    dfy = (pd[1:-1, 1:] - pd[1:-1, :-1]) / grid.hy
    wfx = (pw[1:, 1:-1] - pw[:-1, 1:-1]) / grid.hx
    wfy = (pw[1:-1, 1:] - pw[1:-1, :-1]) / grid.hy
    if not grid.periodic:
        for a in (dfx, wfx):
            a[0] = 0.0
            a[-1] = 0.0
        for a in (dfy, wfy):
            a[:, 0] = 0.0
            a[:, -1] = 0.0
    sx = np.sum(dfx * wfx, axis=-1) if d.ndim == 3 else dfx * wfx
    sy = np.sum(dfy * wfy, axis=-1) if d.ndim == 3 else dfy * wfy
    return 0.5 * (sx[1:] + sx[:-1] + sy[:, 1:] + sy[:, :-1])


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Midpoint quadrature over the domain."""
    return float(np.sum(f) * grid.cell_volume)


def norm_l2(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def deformation_vorticity(grad_u: np.ndarray):
    """Symmetric / skew-symmetric split: D + V = grad_u exactly."""
    gt = np.swapaxes(grad_u, -1, -2)
    return 0.5 * (grad_u + gt), 0.5 * (grad_u - gt)


# ---------------------------------------------------------------------------
# Poisson solvers and Helmholtz projection
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _spectral_k2(nx: int, ny: int, hx: float, hy: float):
    """Symbol of the composed central div(grad) operator on a periodic grid."""
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=hx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=hy)
    ktx = np.sin(kx * hx) / hx     # modified wavenumber of the central stencil
    kty = np.sin(ky * hy) / hy
    k2 = ktx[:, None] ** 2 + kty[None, :] ** 2
    return ktx, kty, k2


@lru_cache(maxsize=16)
def _bounded_1d_operator(n: int, h: float):
    """Dense 1D matrix of phi -> D_odd(G_even(phi)) and its eigendecomposition."""
    A = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        # even-ghost gradient
        pe = np.concatenate(([e[0]], e, [e[-1]]))
        v = (pe[2:] - pe[:-2]) / (2.0 * h)
        # odd-ghost divergence
        po = np.concatenate(([-v[0]], v, [-v[-1]]))
        A[:, j] = (po[2:] - po[:-2]) / (2.0 * h)
    if not np.allclose(A, A.T, atol=1e-12):
        raise AssertionError("bounded projection operator lost symmetry")
    w, Q = np.linalg.eigh(A)
    return A, w, Q


def poisson_neumann_direct(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    """Solve div(grad phi) = rhs with the bounded composed operator.

    Separable fast diagonalization; components of rhs in the (near-)kernel of
    the operator are dropped, which fixes the additive constant.
    """
    _, wx, Qx = _bounded_1d_operator(grid.nx, grid.hx)
    _, wy, Qy = _bounded_1d_operator(grid.ny, grid.hy)
    R = Qx.T @ rhs @ Qy
    denom = wx[:, None] + wy[None, :]
    scale = max(abs(wx).max(), abs(wy).max())
    mask = np.abs(denom) > 1e-12 * scale
    R = np.where(mask, R, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(mask, R / np.where(mask, denom, 1.0), 0.0)
    return Qx @ R @ Qy.T


def poisson_neumann_cg(grid: Grid, rhs: np.ndarray, tol: float = 1e-10,
                       maxiter: int = 100000) -> np.ndarray:
    """Unpreconditioned CG on the same composed bounded operator."""
    nx, ny = grid.nx, grid.ny
    Ax, _, _ = _bounded_1d_operator(nx, grid.hx)
    Ay, _, _ = _bounded_1d_operator(ny, grid.hy)
    rhs = rhs - rhs.mean()

    def apply(v):
        f = v.reshape(nx, ny)
        return -(Ax @ f + f @ Ay.T).ravel()      # negate: CG wants SPD

    op = LinearOperator((nx * ny, nx * ny), matvec=apply)
    b = -rhs.ravel()
    x, info = cg(op, b, rtol=tol, atol=tol * max(np.linalg.norm(b), 1e-300),
                 maxiter=maxiter)
    if info != 0:
        res = np.linalg.norm(apply(x) - b)
        raise SolverError(f"CG did not converge (info={info}, residual={res:.3e})")
    phi = x.reshape(nx, ny)
    return phi - phi.mean()


def helmholtz_project(grid: Grid, u: np.ndarray, method: str = "direct"):
    """Remove the discrete-gradient part of u.

    Returns (u_sol, phi) with u_sol = u - grad(phi), div(u_sol) ~ 0 in the
    central-difference divergence, and phi mean-zero.  Periodic grids use an
    FFT solve with the modified wavenumber of the central stencil, which
    annihilates the divergence to roundoff; bounded grids use the separable
    direct solver (method='cg' switches to conjugate gradients).
    """
    if grid.periodic:
        ktx, kty, k2 = _spectral_k2(grid.nx, grid.ny, grid.hx, grid.hy)
        uh = np.fft.fft2(u[..., 0])
        vh = np.fft.fft2(u[..., 1])
        divh = 1j * (ktx[:, None] * uh + kty[None, :] * vh)
        # sin(pi) is not exactly zero: mask near-null modes (mean, Nyquist)
        # with a relative tolerance or they get amplified by ~1/eps^2
        live = k2 > 1e-12 * k2.max()
        with np.errstate(divide="ignore", invalid="ignore"):
            phih = np.where(live, -divh / np.where(live, k2, 1.0), 0.0)
        phi = np.real(np.fft.ifft2(phih))
        gpx = np.real(np.fft.ifft2(1j * ktx[:, None] * phih))
        gpy = np.real(np.fft.ifft2(1j * kty[None, :] * phih))
        u_sol = u - np.stack([gpx, gpy], axis=-1)
        return u_sol, phi - phi.mean()
    rhs = divergence(grid, u, parity="odd")
    if method == "cg":
        phi = poisson_neumann_cg(grid, rhs)
    else:
        phi = poisson_neumann_direct(grid, rhs)
    u_sol = u - gradient(grid, phi, parity="even")
    return u_sol, phi - phi.mean()


# ---------------------------------------------------------------------------
# field container and snapshot format
# ---------------------------------------------------------------------------

_MAGIC = b"ELF2"
_VERSION = 1
_HEADER = struct.Struct("<4sIBII")      # magic, version, rank, nx, ny
_HEADER_SIZE = 32


@dataclass
class Field:
    """A grid function plus its tensor rank, mainly for snapshot I/O."""

    data: np.ndarray
    rank: int  # 0 scalar, 1 vector, 2 tensor

    def __post_init__(self):
        expect = 2 + self.rank
        if self.data.ndim != expect:
            raise ValueError(f"rank-{self.rank} field needs {expect} axes, got {self.data.ndim}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite values")


def write_snapshot(path, arr: np.ndarray) -> None:
    rank = arr.ndim - 2
    Field(np.asarray(arr, dtype=float), rank)  # validates
    header = _HEADER.pack(_MAGIC, _VERSION, rank, arr.shape[0], arr.shape[1])
    header += b"\x00" * (_HEADER_SIZE - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER_SIZE)
        magic, version, rank, nx, ny = _HEADER.unpack(raw[: _HEADER.size])
        if magic != _MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        shape = (nx, ny) + (2,) * rank
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return data.astype(float)
