"""Command-line surface: simulate, symbols, spectrum, ls-check, validate-params, report.

Exit codes: 0 all asserted properties pass; 1 configuration problem; 2 blow-up
or positivity abort; 3 property violation; 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import config as cfgmod
from . import linear_analysis as la
from . import simulator
from .simulator import BlowUpError, PositivityError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_PROPERTY = 3
EXIT_INTERNAL = 4

ENTROPY_STEP_TOL = 1e-8


def _workers():
    """Worker cap from EL_THREADS; the implementation is single-threaded, so
    any positive value selects the same deterministic execution."""
    try:
        return max(1, int(os.environ.get("EL_THREADS", "1")))
    except ValueError:
        return 1


def _write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def _write_manifest(outdir, cfg, status, t0, summaries):
    manifest = {
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "start_time": datetime.datetime.fromtimestamp(t0).isoformat(),
        "end_time": datetime.datetime.now().isoformat(),
        "exit_status": status,
        "workers": _workers(),
        "acceptance": summaries,
    }
    tmp = os.path.join(outdir, ".manifest.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(outdir, "manifest.json"))


def _load_config(path):
    try:
        return cfgmod.parse_and_validate(path)
    except cfgmod.ConfigError as exc:
        print("config invalid:")
        for v in exc.violations:
            print(f"  - {v}")
        sys.exit(EXIT_CONFIG)
    except OSError as exc:
        print(f"cannot read config: {exc}")
        sys.exit(EXIT_CONFIG)


def _frozen_from_config(cfg, seed=0):
    """Generic freezing point for symbol sweeps: equilibrium temperature,
    a tilted unit director, and a reproducible nonzero director gradient."""
    rng = np.random.default_rng(seed)
    d0 = np.array([3.0, 4.0]) / 5.0
    grad_d0 = 0.3 * rng.standard_normal((2, 2))
    return la.FrozenCoefficients.from_model(cfg.model, cfg.coeffs,
                                            cfg.model.theta_ref, d0, grad_d0)


def _sample_z_xi(rng, zmax=10.0, ximax=10.0):
    z = complex(rng.uniform(0, zmax), rng.uniform(-zmax, zmax))
    xi = rng.uniform(-ximax, ximax, size=2)
    return z, xi


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load_config(args.config)
    outdir = args.outdir or cfg.outputs.dir
    os.makedirs(outdir, exist_ok=True)
    t0 = time.time()
    summaries = {}
    try:
        result = simulator.run(cfg, outdir=outdir)
    except (BlowUpError, PositivityError) as exc:
        print(f"FAIL simulate: {exc}")
        _write_manifest(outdir, cfg, EXIT_BLOWUP, t0, {"error": str(exc)})
        return EXIT_BLOWUP

    rows = result.rows
    _write_rows_csv(os.path.join(outdir, "diagnostics.csv"),
                    simulator.DiagnosticsRow.FIELDS,
                    [r.values() for r in rows])

    Ns = [r.N_total for r in rows]
    first_bad = next((k for k in range(1, len(Ns))
                      if Ns[k] < Ns[k - 1] - ENTROPY_STEP_TOL), None)
    e_drift = abs(rows[-1].E_total - rows[0].E_total) / max(abs(rows[0].E_total), 1e-300)
    summaries.update(
        e_drift=e_drift,
        entropy_monotone=first_bad is None,
        max_unit_drift=max(r.max_unit_drift for r in rows),
        final_dist_to_eq=rows[-1].dist_to_eq,
        decay_rate=result.decay_rate,
        n_steps=result.n_steps,
        dt=result.dt,
    )
    ok = first_bad is None and all(r.min_theta > 0 for r in rows)
    status = EXIT_OK if ok else EXIT_PROPERTY
    _write_manifest(outdir, cfg, status, t0, summaries)
    verdict = "PASS" if ok else f"FAIL (entropy decreased at sample {first_bad})"
    rate = f"{result.decay_rate:.4g}" if result.decay_rate is not None else "n/a"
    print(f"{verdict} simulate: {result.n_steps} steps, E drift {e_drift:.3e}, "
          f"unit drift {summaries['max_unit_drift']:.3e}, decay rate {rate}")
    return status


def cmd_symbols(args):
    cfg = _load_config(args.config)
    outdir = args.outdir or cfg.outputs.dir
    os.makedirs(outdir, exist_ok=True)
    fc = _frozen_from_config(cfg)
    rng = np.random.default_rng(args.seed)
    rows = []
    worst_acc = np.inf
    worst_stokes = np.inf
    worst_schur = 0.0
    worst_det_ratio = np.inf
    for _ in range(args.samples):
        z, xi = _sample_z_xi(rng)
        v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        v /= np.linalg.norm(v)
        acc = la.accretivity(fc, z, xi, v)
        worst_acc = min(worst_acc, acc["lhs"])
        rows.append((z.real, z.imag, xi[0], xi[1], 0.0, acc["lhs"]))
        try:
            st = la.stokes_symbol(fc, z, xi)
            worst_stokes = min(worst_stokes, st["ellipticity_margin"])
            rows.append((z.real, z.imag, xi[0], xi[1], 1.0, st["ellipticity_margin"]))
            fth = complex(rng.standard_normal(), rng.standard_normal())
            fd = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            uu = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            sol = la.schur_theta_d(fc, z, xi, fth, fd, uu)
            L = la.symbol_L(fc, z, xi)
            res_th = (L[2, 2] * sol["theta"] + L[2, 3:] @ sol["d"]
                      + L[2, :2] @ uu - fth)
            res_d = (L[3:, 2] * sol["theta"] + L[3:, 3:] @ sol["d"]
                     + L[3:, :2] @ uu - fd)
            scale = max(abs(fth), np.linalg.norm(fd), np.linalg.norm(uu), 1.0)
            resid = max(abs(res_th), np.abs(res_d).max()) / scale
            worst_schur = max(worst_schur, resid)
            worst_det_ratio = min(worst_det_ratio,
                                  abs(sol["det"]) / abs(z + xi @ xi) ** 2)
        except la.SingularSymbolError:
            pass
    _write_rows_csv(os.path.join(outdir, "symbols_sweep.csv"),
                    ("re_z", "im_z", "xi_x", "xi_y", "quantity", "margin"), rows)
    ok = (worst_acc >= -1e-12 and worst_stokes >= -1e-10
          and worst_schur <= 1e-10 and worst_det_ratio > 0)
    print(f"{'PASS' if ok else 'FAIL'} symbols: min accretivity {worst_acc:.3e}, "
          f"min Stokes margin {worst_stokes:.3e}, max Schur residual "
          f"{worst_schur:.3e}, det lower-bound c {worst_det_ratio:.3e}")
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_ls_check(args):
    cfg = _load_config(args.config)
    outdir = args.outdir or cfg.outputs.dir
    os.makedirs(outdir, exist_ok=True)
    fc = _frozen_from_config(cfg)
    nu = np.array([0.0, 1.0])
    rows = []
    worst = np.inf
    args_z = np.linspace(-np.pi / 2, np.pi / 2, args.nz)
    xis = np.linspace(-10.0, 10.0, args.nxi)
    try:
        for ph in args_z:
            z = np.exp(1j * ph)
            for xt in xis:
                xi_t = np.array([xt, 0.0])
                if abs(z) < 1e-12 and abs(xt) < 1e-12:
                    continue
                det = la.lopatinskii_determinant(fc, z, xi_t, nu)
                rows.append((z.real, z.imag, xt, 0.0, 2.0, abs(det)))
                worst = min(worst, abs(det))
    except la.StructureError as exc:
        print(f"FAIL ls-check: {exc}")
        return EXIT_PROPERTY
    _write_rows_csv(os.path.join(outdir, "lopatinskii_sweep.csv"),
                    ("re_z", "im_z", "xi_x", "xi_y", "quantity", "margin"), rows)
    ok = worst >= 1e-6
    print(f"{'PASS' if ok else 'FAIL'} ls-check: min |det| {worst:.3e} "
          f"over {len(rows)} boundary samples")
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_spectrum(args):
    cfg = _load_config(args.config)
    outdir = args.outdir or cfg.outputs.dir
    os.makedirs(outdir, exist_ok=True)
    dim = 5 * cfg.grid.nx * cfg.grid.ny
    if dim > 4200:
        print(f"config invalid: state dimension {dim} too large for a dense eigensolve")
        return EXIT_CONFIG
    A = la.linearize_at_equilibrium(cfg)
    res = la.spectrum_check(A, cfg.grid)
    _write_rows_csv(os.path.join(outdir, "spectrum.csv"), ("re", "im"),
                    [(ev.real, ev.imag) for ev in res["eigenvalues"]])
    expected_kernel = 5 if cfg.grid.periodic else 3
    ok = (res["spectral_gap"] > 0 and res["semi_simple"]
          and res["kernel_dim"] == expected_kernel)
    summary = {"kernel_dim": res["kernel_dim"], "spectral_gap": res["spectral_gap"],
               "semi_simple": res["semi_simple"]}
    with open(os.path.join(outdir, "spectrum_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"{'PASS' if ok else 'FAIL'} spectrum: kernel_dim {res['kernel_dim']} "
          f"(expected {expected_kernel}), gap {res['spectral_gap']:.4f}, "
          f"semi-simple {res['semi_simple']}")
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_validate(args):
    cfg = _load_config(args.config)
    dt = cfg.resolved_dt()
    print(f"PASS validate-params: config hash {cfg.digest()}, dt {dt:.6g} "
          f"(CFL limit {cfg.cfl_limit():.6g})")
    return EXIT_OK


def cmd_report(args):
    path = os.path.join(args.outdir, "diagnostics.csv")
    if not os.path.exists(path):
        print(f"missing artifact: {path}")
        return EXIT_CONFIG
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    cols = {name: data[:, k] for k, name in enumerate(header)}
    e_drift = abs(cols["E"][-1] - cols["E"][0]) / max(abs(cols["E"][0]), 1e-300)
    dN = np.diff(cols["N"])
    bad = np.nonzero(dN < -ENTROPY_STEP_TOL)[0]
    n_verdict = ("PASS" if bad.size == 0
                 else f"FAIL first violation at sample {bad[0] + 1}")
    print(f"energy drift {e_drift:.3e} {'PASS' if e_drift <= 1e-5 else 'FAIL'}")
    print(f"entropy monotonicity {n_verdict}")
    print(f"unit drift max {np.max(cols['unit_drift']):.3e}")

    class _Row:
        def __init__(self, t, d):
            self.t, self.dist_to_eq = t, d
    rate = simulator.fit_decay_rate([_Row(t, d) for t, d
                                     in zip(cols["t"], cols["dist_to_eq"])])
    if rate is not None:
        line = f"fitted decay rate {rate:.4g}"
        spath = os.path.join(args.outdir, "spectrum_summary.json")
        if os.path.exists(spath):
            with open(spath) as fh:
                gap = json.load(fh)["spectral_gap"]
            line += f", spectral gap {gap:.4g}, ratio {rate / gap:.3f}"
        print(line)
    for name in header[1:]:
        out = os.path.join(args.outdir, f"t_vs_{name}.dat")
        np.savetxt(out, np.column_stack([cols["t"], cols[name]]))
    return EXIT_OK


# ---------------------------------------------------------------------------

def main(argv=None):
    ap = argparse.ArgumentParser(prog="elflow",
                                 description="liquid-crystal flow laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("config", help="TOML run configuration")
        p.add_argument("--outdir", default=None)
        p.set_defaults(fn=fn)
        return p

    add("simulate", cmd_simulate)
    ps = add("symbols", cmd_symbols)
    ps.add_argument("--samples", type=int, default=10000)
    ps.add_argument("--seed", type=int, default=0)
    pl = add("ls-check", cmd_ls_check)
    pl.add_argument("--nz", type=int, default=9)
    pl.add_argument("--nxi", type=int, default=21)
    add("spectrum", cmd_spectrum)
    add("validate-params", cmd_validate)
    pr = sub.add_parser("report")
    pr.add_argument("outdir")
    pr.set_defaults(fn=cmd_report)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (BlowUpError, PositivityError) as exc:
        print(f"aborted: {exc}")
        return EXIT_BLOWUP
    except Exception as exc:          # noqa: BLE001 - map to the exit contract
        print(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
