"""Command line entry point: ``critpoints <subcommand> [options]``.

Exit codes: 0 ok, 1 parse error, 2 inadmissible coefficients,
3 under-resolved quadrature, 4 sampler configuration, 5 failed validation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import __version__
from .covariance import check_admissibility, parse_model, taylor_coeffs
from .exceptions import (
    CritPointsError,
    InadmissibleCoefficients,
    ModeBudgetTooSmall,
    QuadratureUnderResolved,
)
from .io import write_table
from .quadrature import THREADS_ENV, SphereQuadrature, default_threads

EXIT_OK, EXIT_PARSE, EXIT_INADMISSIBLE, EXIT_QUADRATURE, EXIT_SAMPLER, EXIT_VALIDATION = range(6)

log = logging.getLogger("critpoints")


@dataclass(frozen=True)
class RGrid:
    start: float
    stop: float
    count: int
    log: bool = False

    @classmethod
    def parse(cls, text: str, log: bool = False) -> "RGrid":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must look like start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1 or start <= 0 or stop < start:
            raise ValueError(f"need 0 < start <= stop and count >= 1, got {text!r}")
        return cls(start, stop, count, log)

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.start])
        if self.log:
            return np.geomspace(self.start, self.stop, self.count)
        return np.linspace(self.start, self.stop, self.count)

    def __str__(self) -> str:
        return f"{self.start!r}:{self.stop!r}:{self.count}"


@dataclass(frozen=True)
class RunConfig:
    """Resolved options of one run; round-trips through ``to_dict``."""

    command: str
    model: str = "bf"
    r: str | None = None
    log: bool = False
    samples: int = 1_000_000
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    threads: int = 1
    typed: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_PARSE)


def _count(text: str) -> int:
    value = float(text)
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _common(p: argparse.ArgumentParser, samples: int | None = None) -> None:
    p.add_argument("--model", default="bf", help="rwm, bf, mix:<w> or poly:g4,g6,g8 (default: bf)")
    p.add_argument("--seed", type=int, default=0, help="root seed (default: 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1); results do not depend on it")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default: csv)")
    if samples is not None:
        p.add_argument("--samples", type=_count, default=samples,
                       help=f"quadrature points per radius (default: {samples:g})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="critpoints", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("coeffs", help="Taylor coefficients, admissibility and constants of a model")
    _common(p)

    p = sub.add_parser("k2", help="two-point function on a grid of radii")
    _common(p, samples=1_000_000)
    p.add_argument("--r", default="0.01:0.5:20", help="start:stop:count (default: 0.01:0.5:20)")
    p.add_argument("--log", action="store_true", help="geometric instead of linear grid")
    p.add_argument("--typed", default=None, help="ordered type pair a,b with a, b in min|max|saddle|extremum")
    p.add_argument("--method", default=None,
                   help="sphere|line|importance|conditional (default: sphere, or auto with --typed)")
    p.add_argument("--rtol", type=float, default=None, help="fail (exit 3) above this relative error")

    p = sub.add_parser("simulate", help="simulate fields, count critical points, estimate K2")
    _common(p, samples=200_000)
    p.add_argument("--L", type=float, default=30.0, help="torus side (default: 30)")
    p.add_argument("--n", type=_count, default=200, help="number of field samples (default: 200)")
    p.add_argument("--r", default="0:1:10", help="histogram bins start:stop:count (default: 0:1:10)")
    p.add_argument("--typed", default=None, help="restrict pairs to ordered types a,b")
    p.add_argument("--spacing", type=float, default=0.05, help="finder grid spacing (default: 0.05)")
    p.add_argument("--mode-budget", type=int, default=None, help="largest number of spectral modes")
    p.add_argument("--no-analytic", action="store_true", help="skip the analytic K2 comparison")
    p.add_argument("--points-out", default=None, help="also write all critical points as CSV")

    p = sub.add_parser("validate", help="run the analytic self-checks")
    p.add_argument("--only", default=None, help="comma-separated groups: series,delta,eigen,aF,sphere")
    p.add_argument("--fault-gamma2", type=float, default=0.0, help="perturb gamma2 to test the checks")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _threads(args) -> int:
    return args.threads if args.threads else default_threads()


def _config(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        model=getattr(args, "model", ""),
        r=getattr(args, "r", None),
        log=getattr(args, "log", False),
        samples=getattr(args, "samples", 0),
        seed=getattr(args, "seed", 0),
        out=args.out,
        format=args.format,
        threads=_threads(args) if hasattr(args, "threads") else 1,
        typed=getattr(args, "typed", None),
    )


def _emit(args, records, meta=None, columns=None):
    payload = {"config": _config(args).to_dict()}
    payload.update(meta or {})
    write_table(records, args.format, args.out, columns=columns, meta=payload)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_coeffs(args) -> int:
    from .kacrice import asymptotic_constants, density_k1

    kernel = parse_model(args.model)
    coeffs = taylor_coeffs(kernel)
    report = check_admissibility(coeffs)
    rec = {
        "model": args.model,
        "g2": coeffs.g2,
        "g4": coeffs.g4,
        "g6": coeffs.g6,
        "g8": coeffs.g8,
        "slack": report.slack,
        "degenerate": report.degenerate,
        "warn_b_sign": report.warn_b_sign,
        "warn_g8": report.warn_g8,
        "warnings": ";".join(report.warnings),
        "density": density_k1(coeffs).per_area,
    }
    if not report.degenerate:
        const = asymptotic_constants(coeffs)
        rec.update(phi=const.phi, varphi=const.varphi, A=const.A, B=const.B,
                   a_F=const.a_F, k2_limit=const.k2_limit)
    _emit(args, [rec])
    return EXIT_OK


def cmd_k2(args) -> int:
    from .kacrice import asymptotic_constants, decay_exponent_fit, k2, typed_k2

    kernel = parse_model(args.model)
    coeffs = taylor_coeffs(kernel)
    check_admissibility(coeffs)
    grid = RGrid.parse(args.r, args.log)
    quad = SphereQuadrature(args.samples, args.seed, threads=_threads(args))
    rows = []
    for r in grid.values():
        if args.typed:
            est = typed_k2(kernel, float(r), args.typed, quad, rtol=args.rtol,
                           method=args.method or "auto", coeffs=coeffs)
        else:
            est = k2(kernel, float(r), quad, rtol=args.rtol, method=args.method or "sphere", coeffs=coeffs)
        log.info("r=%.6g K2=%.6g +- %.2g", est.r, est.value, est.std_error)
        rec = est.to_record()
        rec["model"] = args.model
        rec["method"] = est.method
        rec["tag"] = "k2"
        rows.append(rec)
    const = asymptotic_constants(coeffs)
    base = {"model": args.model, "r": 0.0, "std_error": 0.0, "n_samples": 0, "seed": args.seed}
    rows.append({**base, "value": const.a_F, "tag": "asymptote"})
    rows.append({**base, "value": const.k2_limit, "tag": "asymptote_ordered"})
    if args.typed and len(rows) >= 6:
        pts = [(x["r"], x["value"], x["std_error"]) for x in rows if x["tag"] == "k2" and x["value"] > 0]
        if len(pts) >= 4:
            fit = decay_exponent_fit(*zip(*pts))
            rows.append({**base, "r": math.nan, "value": fit.slope, "std_error": fit.std_error,
                         "n_samples": fit.n_points, "tag": "fit_exponent"})
    columns = ["model", "r", "value", "std_error", "n_samples", "seed", "type_pair", "method", "tag"]
    _emit(args, rows, columns=columns)
    return EXIT_OK


def _annulus_k2(kernel, coeffs, lo, hi, quad, nodes=4):
    """Annulus average of K2 over [lo, hi] with weight 2 pi rho."""
    from .kacrice import k2

    x, w = np.polynomial.legendre.leggauss(nodes)
    rho = lo + (hi - lo) * (x + 1) / 2
    w = w * (hi - lo) / 2 * rho
    vals, errs = [], []
    for r in rho:
        est = k2(kernel, float(max(r, 1e-3)), quad, coeffs=coeffs)
        vals.append(est.value)
        errs.append(est.std_error)
    norm = w.sum()
    return float(w @ np.array(vals) / norm), float(w @ np.array(errs) / norm)


def cmd_simulate(args) -> int:
    from .fieldsim import SpectralSampler, empirical_pair_correlation, simulate
    from .kacrice import asymptotic_constants, density_k1, typed_k2

    kernel = parse_model(args.model)
    coeffs = taylor_coeffs(kernel)
    sampler = SpectralSampler(kernel, args.L, args.mode_budget, args.seed)
    parts = args.r.split(":")
    if len(parts) != 3:
        raise ValueError(f"bins must look like start:stop:count, got {args.r!r}")
    edges = np.linspace(float(parts[0]), float(parts[1]), int(parts[2]) + 1)
    sets = simulate(sampler, args.n, spacing=args.spacing, threads=_threads(args))
    if args.points_out:
        write_table([rec for ps in sets for rec in ps.records()], "csv", args.points_out,
                    columns=["sample_id", "x", "y", "type", "hess_det", "hess_trace"])

    area = args.L**2
    counts = np.array([len(ps) for ps in sets], dtype=float)
    dens = counts.mean() / area
    dens_se = counts.std(ddof=1) / math.sqrt(len(counts)) / area if len(counts) > 1 else math.nan
    expected = density_k1(coeffs).per_area
    morse = np.array([ps.euler_defect == 0 for ps in sets])
    hist = empirical_pair_correlation(sets, edges, typed=args.typed)

    rows = [
        {"section": "density", "value": dens, "std_error": dens_se, "reference": expected,
         "z": (dens - expected) / dens_se if dens_se > 0 else math.nan,
         "verdict": "pass" if abs(dens - expected) <= 3 * dens_se else "fail"},
        {"section": "morse", "value": float(morse.mean()), "reference": 0.95,
         "verdict": "pass" if morse.mean() >= 0.95 else "fail"},
        {"section": "n_modes", "value": float(sampler.n_modes)},
    ]
    quad = SphereQuadrature(args.samples, args.seed, threads=_threads(args))
    ratios = []
    for rec, kh, se in zip(hist.records(), hist.k2_hat, hist.std_err):
        row = {"section": "bin", **rec}
        if not args.no_analytic and rec["r_lo"] > 0:
            if args.typed:
                mid = 0.5 * (rec["r_lo"] + rec["r_hi"])
                est = typed_k2(kernel, mid, args.typed, quad, coeffs=coeffs)
                ref, ref_se = est.value, est.std_error
            else:
                ref, ref_se = _annulus_k2(kernel, coeffs, rec["r_lo"], rec["r_hi"], quad)
            row.update(k2=ref, k2_std_error=ref_se)
            if ref > 0:
                ratio = kh / ref
                row.update(ratio=ratio, ratio_std_error=math.hypot(se / ref, kh * ref_se / ref**2))
                ratios.append(ratio)
        rows.append(row)

    if not args.typed:
        const = asymptotic_constants(coeffs)
        first = next((i for i, c in enumerate(hist.counts) if c > 0), None)
        if first is not None:
            plateau, p_se = hist.k2_hat[first], hist.std_err[first]
            z_single = (plateau - const.a_F) / p_se
            z_double = (plateau - const.k2_limit) / p_se
            rows.append({"section": "near_diagonal", "r_lo": edges[first], "r_hi": edges[first + 1],
                         "value": plateau, "std_error": p_se, "reference": const.a_F,
                         "z_vs_a_F": z_single, "z_vs_2a_F": z_double,
                         "verdict": "2a_F" if abs(z_double) < abs(z_single) else "a_F"})
    if ratios:
        worst = float(np.max(np.abs(np.array(ratios) - 1)))
        rows.append({"section": "k2_ratio", "value": worst, "reference": 0.1,
                     "verdict": "pass" if worst <= 0.1 else "fail"})
    columns = ["section", "r_lo", "r_hi", "k2_hat", "std_err", "n_pairs", "k2", "k2_std_error", "ratio",
               "ratio_std_error", "value", "std_error", "reference", "z", "z_vs_a_F", "z_vs_2a_F", "verdict"]
    _emit(args, rows, columns=columns)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_checks

    only = [g.strip() for g in args.only.split(",")] if args.only else None
    checks = run_checks(only, args.fault_gamma2)
    write_table([c.to_record() for c in checks], args.format, args.out,
                meta={"config": {"command": "validate", "only": args.only, "fault_gamma2": args.fault_gamma2}})
    failed = [c for c in checks if not c.passed]
    if failed:
        sys.stderr.write("failed checks: " + ", ".join(f"{c.group}/{c.name}" for c in failed) + "\n")
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {"coeffs": cmd_coeffs, "k2": cmd_k2, "simulate": cmd_simulate, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except InadmissibleCoefficients as exc:
        sys.stderr.write(f"inadmissible coefficients: {exc}\n")
        return EXIT_INADMISSIBLE
    except QuadratureUnderResolved as exc:
        sys.stderr.write(f"quadrature under-resolved: {exc}\n")
        return EXIT_QUADRATURE
    except ModeBudgetTooSmall as exc:
        sys.stderr.write(f"sampler: {exc}\n")
        return EXIT_SAMPLER
    except (ValueError, CritPointsError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE


if __name__ == "__main__":
    raise SystemExit(main())
