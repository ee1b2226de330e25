"""Command-line front end: solve, measure, divisors, spectrum, verify.

A thin shell over the library: every command is a sequence of library calls
plus artifact writing.  Data payloads are deterministic given the flags
(timestamps and wall-clock timings live only in the run manifest).

Exit codes: 0 success, 1 numeric failure, 2 amplitude excluded by a
non-resonance condition, 64 usage error, 65 insufficient solve grid,
66 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_EXCLUDED = 2
EXIT_USAGE = 64
EXIT_GRID = 65
EXIT_MISSING = 66


def _cap_threads(n: int | None):
    """Cap BLAS threading before numpy gets imported by the library."""
    n = n if n is not None else os.environ.get("RESONANT_KG_THREADS")
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resonant-kg",
                description="Time-periodic solutions of the cubic Klein-Gordon "
                            "equation on the 3-sphere: solver and diagnostics.")
    p.add_argument("--threads", type=int, default=None,
                   help="cap internal BLAS threads (env RESONANT_KG_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    so = sub.add_parser("solve", help="run the full iteration and write artifacts")
    so.add_argument("--eps", type=float, required=True)
    so.add_argument("--m", type=int, default=0)
    so.add_argument("--gamma", type=float, default=0.05)
    so.add_argument("--tau", type=float, default=1.5)
    so.add_argument("--sigma-bar", type=float, default=1.0)
    so.add_argument("--s", type=float, default=1.0)
    so.add_argument("--L0", type=int, default=8)
    so.add_argument("--theta", type=float, default=0.25)
    so.add_argument("--stages", type=int, default=6)
    so.add_argument("--j-space", type=int, default=None)
    so.add_argument("--no-divisors", action="store_true",
                    help="skip the per-stage small-divisor tables")
    so.add_argument("--out", required=True)

    me = sub.add_parser("measure", help="estimate the admissible-amplitude measure")
    me.add_argument("--eta", type=float, action="append", required=True,
                    help="window size; repeat for an exponent fit")
    me.add_argument("--samples", type=int, default=100000)
    me.add_argument("--gamma", type=float, default=0.05)
    me.add_argument("--tau", type=float, default=1.5)
    me.add_argument("--m", type=int, default=0)
    me.add_argument("--solve-grid", type=int, default=4,
                    help="number of amplitudes at which the branch mean is solved")
    me.add_argument("--out", required=True)

    dv = sub.add_parser("divisors", help="small-divisor table from a run directory")
    dv.add_argument("--run", required=True)
    dv.add_argument("--out", default=None)

    sp = sub.add_parser("spectrum", help="block spectra from a run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--ell-max", type=int, default=None)
    sp.add_argument("--out", default=None)

    ve = sub.add_parser("verify", help="residual report for a stored field")
    ve.add_argument("--field", required=True)
    ve.add_argument("--eps", type=float, required=True)
    ve.add_argument("--out", default=None)
    return p


def _write_manifest(outdir, config_dict, artifacts, timings):
    import importlib.metadata
    import numpy
    import scipy
    try:
        version = importlib.metadata.version("resonant-kg")
    except importlib.metadata.PackageNotFoundError:
        version = "unknown"
    manifest = {
        "config": config_dict,
        "artifacts": {k: os.path.basename(v) for k, v in artifacts.items()},
        "versions": {"resonant-kg": version, "numpy": numpy.__version__,
                     "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
        "timings_s": timings,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def cmd_solve(args) -> int:
    from . import field_algebra, nash_moser
    from .resonance import records_to_csv

    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    try:
        config = nash_moser.SolverConfig(
            eps=args.eps, m=args.m, gamma=args.gamma, tau=args.tau,
            sigma_bar=args.sigma_bar, s=args.s, theta=args.theta, L0=args.L0,
            n_max=args.stages, J_space=args.j_space,
            divisor_diagnostics=not args.no_divisors)
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = nash_moser.run(config)
    except nash_moser.MelnikovExcludedError as exc:
        path = os.path.join(args.out, "melnikov_failures.csv")
        records_to_csv(exc.records, path)
        print(f"amplitude excluded at stage {exc.stage}; "
              f"{len(exc.records)} failing condition(s) written to {path}",
              file=sys.stderr)
        return EXIT_EXCLUDED
    except Exception as exc:
        if exc.__class__.__module__.startswith("resonant_kg"):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise
    t1 = time.perf_counter()
    artifacts = {}
    artifacts["solution"] = os.path.join(args.out, "solution.field")
    field_algebra.save_field(result.u, artifacts["solution"])
    artifacts["range_part"] = os.path.join(args.out, "range_part.field")
    field_algebra.save_field(result.w, artifacts["range_part"])
    artifacts["kernel"] = os.path.join(args.out, "kernel.json")
    with open(artifacts["kernel"], "w") as fh:
        json.dump({"m": config.m, "coefficients": list(result.kernel.v)}, fh, indent=1)
    artifacts["trace"] = os.path.join(args.out, "trace.jsonl")
    result.trace.to_jsonl(artifacts["trace"])
    artifacts["residual_report"] = os.path.join(args.out, "residual_report.json")
    result.residual.to_json(artifacts["residual_report"])
    artifacts["solution_csv"] = os.path.join(args.out, "solution.csv")
    field_algebra.field_to_csv(result.u, artifacts["solution_csv"])
    _write_manifest(args.out, config.to_dict(), artifacts,
                    {"solve": t1 - t0, "write": time.perf_counter() - t1})
    print(f"converged: {len(result.trace.records)} stage records, "
          f"residual {result.residual.relative:.3e} (relative), artifacts in {args.out}")
    return EXIT_OK


def _mean_curve(eps_grid, m):
    """Branch mean M(w(eps)) at a grid of amplitudes, by short full solves."""
    import numpy as np
    from .nash_moser import SolverConfig, run
    from .resonance import mean_potential

    values = []
    for e in eps_grid:
        config = SolverConfig(eps=float(e), m=m, n_max=2, check_melnikov=False,
                              divisor_diagnostics=False)
        result = run(config)
        values.append(mean_potential(result.w, result.kernel))
    return np.array(values)


def cmd_measure(args) -> int:
    import numpy as np
    from .resonance import ResonanceParams, measure_scan, fit_excluded_exponent

    if args.solve_grid < 2:
        print("solve grid must contain at least 2 amplitudes for interpolation",
              file=sys.stderr)
        return EXIT_GRID
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    t0 = time.perf_counter()
    etas = sorted(set(args.eta), reverse=True)
    try:
        params = ResonanceParams(args.gamma, args.tau, eps0=max(etas))
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    grid = np.linspace(1e-6, max(etas), args.solve_grid)
    mvals = _mean_curve(grid, args.m)
    m_of_eps = lambda e: np.interp(e, grid, mvals)
    reports = [measure_scan(eta, args.samples, params, m_of_eps) for eta in etas]
    payload = {
        "gamma": args.gamma,
        "tau": args.tau,
        "m": args.m,
        "solve_grid": list(map(float, grid)),
        "mean_values": list(map(float, mvals)),
        "reports": [json.loads(r.to_json()) for r in reports],
        "fitted_exponent": fit_excluded_exponent(reports) if len(reports) >= 2 else None,
        "elapsed_s": time.perf_counter() - t0,
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    fitted = payload["fitted_exponent"]
    print(f"admissible fractions: "
          + ", ".join(f"{r.eta:g}: {r.fraction_interval:.4f}" for r in reports)
          + (f"; fitted exponent {fitted:.3f}" if fitted is not None else ""))
    return EXIT_OK


def _load_run(run_dir):
    from .field_algebra import load_field
    needed = ["range_part.field", "kernel.json", "manifest.json"]
    for name in needed:
        if not os.path.exists(os.path.join(run_dir, name)):
            raise FileNotFoundError(f"missing artifact {name} in {run_dir}")
    w = load_field(os.path.join(run_dir, "range_part.field"))
    with open(os.path.join(run_dir, "kernel.json")) as fh:
        kernel_data = json.load(fh)
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        config = json.load(fh)["config"]
    return w, kernel_data, config


def cmd_divisors(args) -> int:
    import numpy as np
    from .bifurcation import KernelField
    from .field_algebra import field_multiply
    from .linearized import divisor_table

    try:
        w, kernel_data, config = _load_run(args.run)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    v = KernelField(np.array(kernel_data["coefficients"]))
    u = v.embed(L=max(w.L, v.J + 1), J=max(w.J, v.J)) + w
    b = 3.0 * field_multiply(u, u)
    L_n = w.L
    table = divisor_table(config["eps"], b.u[0], L_n, 2 * L_n,
                          config["gamma"], config["tau"])
    out = args.out or os.path.join(args.run, "divisors.csv")
    table.to_csv(out)
    print(f"{len(table.ells)} divisors written to {out}; floor "
          f"{'holds' if table.all_ok else 'VIOLATED'}")
    return EXIT_OK if table.all_ok else EXIT_NUMERIC


def cmd_spectrum(args) -> int:
    import numpy as np
    from .bifurcation import KernelField
    from .field_algebra import field_multiply
    from .linearized import diagonalize_block, spectrum_to_csv

    try:
        w, kernel_data, config = _load_run(args.run)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    v = KernelField(np.array(kernel_data["coefficients"]))
    u = v.embed(L=max(w.L, v.J + 1), J=max(w.J, v.J)) + w
    b = 3.0 * field_multiply(u, u)
    ell_max = args.ell_max if args.ell_max is not None else min(w.L, 64)
    blocks = [diagonalize_block(ell, config["eps"], b.u[0], 2 * w.L, want_vectors=False)
              for ell in range(ell_max + 1)]
    out = args.out or os.path.join(args.run, "spectrum.csv")
    spectrum_to_csv(blocks, out)
    print(f"spectra of {len(blocks)} blocks written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .field_algebra import load_field
    from .nash_moser import verify_solution

    if not os.path.exists(args.field):
        print(f"missing field file {args.field}", file=sys.stderr)
        return EXIT_MISSING
    u = load_field(args.field)
    report = verify_solution(u, args.eps)
    if args.out:
        report.to_json(args.out)
    print(f"residual (relative to ||u||^3): {report.relative:.6e}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    _cap_threads(args.threads)
    handlers = {"solve": cmd_solve, "measure": cmd_measure,
                "divisors": cmd_divisors, "spectrum": cmd_spectrum,
                "verify": cmd_verify}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
