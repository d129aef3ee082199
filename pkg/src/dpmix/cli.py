"""Command-line front end: calibrate, sweep, sample, verify, compose.

Exit codes: 0 success or verification pass, 1 numeric or verification
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .accountant import CompositionLedger, UnsupportedMechanismError, ledger_add, ledger_to_dp
from .analytic_gaussian import PrivacyParams
from .calibration import (
    LOSSES,
    MECHANISMS,
    CalibrationResult,
    calibrate,
    failed_result,
)
from .multi_gaussian import DEFAULT_ETA, DEFAULT_K_GRID, CalibrationError, MultiGaussianDist, mg_sample
from .numerics import BracketError, ConvergenceError
from .quasi_gaussian import QuasiCalibrationError, QuasiGaussianDist, qg_sample
from .verifier import verify_calibrated, verify_mechanism

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
NUMERIC_ERRORS = (CalibrationError, QuasiCalibrationError, BracketError,
                  ConvergenceError, FloatingPointError, ZeroDivisionError)

DEFAULT_EPSILONS = (0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0)
DEFAULT_DELTAS = (5e-7, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3,
                  0.01, 0.02, 0.05, 0.1, 0.15, 0.25)
CSV_HEADER = ("mechanism", "epsilon", "delta", "sensitivity", "sigma", "k", "eta",
              "l1", "l2", "improvement_pct", "verify_slack", "wall_ms", "reason")
SAMPLE_CHUNK = 1 << 16


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- formatting

def fmt12(x) -> str:
    """12 significant digits; NA for missing or NaN."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{float(x):.12g}"


def _num12(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return float(f"{float(x):.12g}")


def result_to_dict(r: CalibrationResult) -> dict:
    p = r.params
    return {
        "mechanism": r.mechanism,
        "params": {"epsilon": _num12(p.epsilon), "delta": _num12(p.delta),
                   "sensitivity": _num12(p.sensitivity)},
        "sigma": _num12(r.sigma),
        "chosen_k": r.chosen_k,
        "eta": _num12(r.eta),
        "l1": _num12(r.l1),
        "l2": _num12(r.l2),
        "improvement_vs_baseline_pct": _num12(r.improvement_vs_baseline_pct),
        "verify_slack": _num12(r.verify_slack),
        "wall_ms": _num12(r.wall_ms),
        "loss": r.loss,
        "reason": r.reason,
        "detail": {k: (_num12(v) if isinstance(v, float) else v) for k, v in r.detail.items()},
    }


def result_to_row(r: CalibrationResult) -> List[str]:
    p = r.params
    blank = lambda v: "" if v is None else fmt12(v)
    return [r.mechanism, fmt12(p.epsilon), fmt12(p.delta), fmt12(p.sensitivity),
            fmt12(r.sigma), "" if r.chosen_k is None else str(r.chosen_k), blank(r.eta),
            fmt12(r.l1), fmt12(r.l2), fmt12(r.improvement_vs_baseline_pct),
            fmt12(r.verify_slack), fmt12(r.wall_ms), r.reason]


def render(results: Sequence[CalibrationResult], output_format: str) -> str:
    if output_format == "json":
        return json.dumps([result_to_dict(r) for r in results], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow(result_to_row(r))
    return buf.getvalue()


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepConfig:
    epsilons: Tuple[float, ...] = DEFAULT_EPSILONS
    deltas: Tuple[float, ...] = DEFAULT_DELTAS
    sensitivity: float = 1.0
    mechanisms: Tuple[str, ...] = MECHANISMS
    k_grid: Tuple[int, ...] = DEFAULT_K_GRID
    eta: float = DEFAULT_ETA
    loss: str = "l1"
    output_format: str = "csv"
    parallelism: int = 1
    verify: bool = True

    def __post_init__(self):
        if not self.epsilons or not self.deltas:
            raise UsageError("epsilons and deltas must be nonempty")
        if not self.mechanisms:
            raise UsageError("mechanisms must be nonempty")
        bad = [m for m in self.mechanisms if m not in MECHANISMS]
        if bad:
            raise UsageError(f"unknown mechanisms {bad}; choose from {list(MECHANISMS)}")
        if self.loss not in LOSSES:
            raise UsageError(f"loss must be one of {list(LOSSES)}")
        if self.output_format not in ("csv", "json"):
            raise UsageError("output_format must be csv or json")
        if not self.k_grid or min(self.k_grid) < 0:
            raise UsageError("k_grid must be nonempty with entries >= 0")
        if not 0 < self.eta < 1:
            raise UsageError("eta must lie in (0, 1)")
        if int(self.parallelism) < 1:
            raise UsageError("parallelism must be >= 1")
        try:
            for e in self.epsilons:
                for d in self.deltas:
                    PrivacyParams(e, d, self.sensitivity)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    @classmethod
    def from_json(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config fields {sorted(unknown)}")
        kw = dict(data)
        for key in ("epsilons", "deltas", "mechanisms"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "k_grid" in kw:
            kw["k_grid"] = tuple(int(k) for k in kw["k_grid"])
        return cls(**kw)


def worker_count(default: int) -> int:
    env = os.environ.get("DPMIX_THREADS")
    if env is None or env == "":
        return max(1, int(default))
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"DPMIX_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise UsageError("DPMIX_THREADS must be >= 1")
    return n


def run_cell(mechanism: str, params: PrivacyParams, cfg: SweepConfig,
             k: Optional[int] = None, verify: bool = True) -> CalibrationResult:
    """One sweep cell; numeric failures become an NA row with a reason."""
    try:
        res = calibrate(mechanism, params, k=k, eta=cfg.eta, k_grid=cfg.k_grid, loss=cfg.loss)
    except NUMERIC_ERRORS as exc:
        eta = cfg.eta if mechanism == "multi-gaussian" else None
        return failed_result(mechanism, params, f"{type(exc).__name__}: {exc}",
                             k=k, eta=eta, loss=cfg.loss)
    if verify:
        try:
            res = res.with_slack(verify_calibrated(res).worst_slack)
        except NUMERIC_ERRORS as exc:
            res = replace(res, reason=f"verify: {type(exc).__name__}: {exc}")
    return res


def _cell_job(args):
    mechanism, eps, delta, cfg = args
    return run_cell(mechanism, PrivacyParams(eps, delta, cfg.sensitivity), cfg, verify=cfg.verify)


def run_sweep(cfg: SweepConfig, workers: int = 1) -> List[CalibrationResult]:
    jobs = [(m, e, d, cfg) for e in cfg.epsilons for d in cfg.deltas for m in cfg.mechanisms]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    key = lambda r: (r.params.epsilon, r.params.delta, r.mechanism)
    return sorted(results, key=key)


# ---------------------------------------------------------------- sampling

def chunk_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for chunk `index`: Philox keyed by the seed and
    advanced by index jumps, so chunks are independent of scheduling."""
    return np.random.Generator(np.random.Philox(seed).jumped(index))


def draw_samples(sampler, n: int, seed: int, workers: int = 1) -> np.ndarray:
    starts = list(range(0, n, SAMPLE_CHUNK))

    def one(i):
        size = min(SAMPLE_CHUNK, n - starts[i])
        return np.asarray(sampler(chunk_generator(seed, i), size), dtype=float)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(len(starts))))
    else:
        parts = [one(i) for i in range(len(starts))]
    return np.concatenate(parts) if parts else np.empty(0)


def _sampler_for(mechanism: str, params: PrivacyParams, sigma: float, k: Optional[int]):
    if mechanism == "analytic-gaussian":
        return lambda rng, size: sigma * rng.standard_normal(size)
    if mechanism == "multi-gaussian":
        dist = MultiGaussianDist(params, sigma, int(k))
        return lambda rng, size: mg_sample(dist, rng, size)
    dist = QuasiGaussianDist(params, sigma)
    return lambda rng, size: qg_sample(dist, rng, size)


# ---------------------------------------------------------------- commands

def _params(args) -> PrivacyParams:
    try:
        return PrivacyParams(args.eps, args.delta, args.sens)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _k_grid(text: Optional[str]):
    if not text:
        return DEFAULT_K_GRID
    try:
        grid = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"--k-grid must be comma-separated integers, got {text!r}")
    if not grid or min(grid) < 0:
        raise UsageError("--k-grid entries must be >= 0")
    return grid


def _check_k_eta(args):
    if args.k is not None and args.k < 0:
        raise UsageError("--k must be >= 0")
    if not 0 < args.eta < 1:
        raise UsageError("--eta must lie in (0, 1)")


def _resolve_sigma(args, params) -> Tuple[float, Optional[int]]:
    """sigma and K from the command line, calibrating when --sigma is absent."""
    k = args.k
    if args.sigma is not None:
        if not args.sigma > 0:
            raise UsageError("--sigma must be positive")
        if args.mech == "multi-gaussian" and k is None:
            raise UsageError("multi-gaussian with --sigma needs --k")
        return args.sigma, k
    res = calibrate(args.mech, params, k=k, eta=args.eta, k_grid=_k_grid(args.k_grid), loss=args.loss)
    return res.sigma, res.chosen_k


def cmd_calibrate(args) -> int:
    params = _params(args)
    _check_k_eta(args)
    cfg = SweepConfig(epsilons=(params.epsilon,), deltas=(params.delta,),
                      sensitivity=params.sensitivity, mechanisms=(args.mech,),
                      k_grid=_k_grid(args.k_grid), eta=args.eta, loss=args.loss)
    res = run_cell(args.mech, params, cfg, k=args.k, verify=not args.no_verify)
    _emit(json.dumps(result_to_dict(res), indent=2) + "\n", args.out)
    if res.reason:
        print(f"error: {res.reason}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if args.no_verify:
        data = {**data, "verify": False}
    try:
        cfg = SweepConfig.from_json(data)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    fmt = args.format or cfg.output_format
    results = run_sweep(cfg, worker_count(cfg.parallelism))
    _emit(render(results, fmt), args.out)
    failed = sum(1 for r in results if r.reason)
    if failed:
        print(f"{failed} of {len(results)} cells failed; see the reason column", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.n < 1:
        raise UsageError("-n must be >= 1")
    if args.seed < 0:
        raise UsageError("--seed must be nonnegative")
    params = _params(args)
    _check_k_eta(args)
    sigma, k = _resolve_sigma(args, params)
    xs = draw_samples(_sampler_for(args.mech, params, sigma, k), args.n, args.seed,
                      worker_count(1))
    if args.format == "json":
        text = "[" + ",".join(repr(float(x)) for x in xs) + "]\n"
    else:
        text = "\n".join(repr(float(x)) for x in xs) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    params = _params(args)
    _check_k_eta(args)
    if args.refine < 1:
        raise UsageError("--refine must be >= 1")
    if not args.scale > 0:
        raise UsageError("--scale must be positive")
    sigma, k = _resolve_sigma(args, params)
    sigma *= args.scale
    eta = args.eta if args.mech == "multi-gaussian" else DEFAULT_ETA
    rep = verify_mechanism(args.mech, params, sigma, k=k, eta=eta, refine_factor=args.refine,
                           quad_tol=args.quad_tol)
    out = {"mechanism": args.mech, "sigma": _num12(sigma), "k": k,
           **{f: (_num12(v) if isinstance(v, float) else v) for f, v in rep.to_dict().items()}}
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def read_ledger_file(path: str) -> CompositionLedger:
    """Reads (sensitivity, sigma[, mechanism]) entries.

    JSON files hold a list of [sensitivity, sigma] pairs or objects with
    those keys plus an optional mechanism; anything else is read as CSV
    lines. Blank lines and lines starting with # are skipped.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read ledger {path}: {exc}") from exc
    rows = []
    stripped = text.strip()
    if stripped.startswith("["):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad ledger JSON: {exc}") from exc
        for item in data:
            if isinstance(item, dict):
                rows.append((item.get("sensitivity"), item.get("sigma"), item.get("mechanism")))
            elif isinstance(item, list) and len(item) in (2, 3):
                rows.append((item[0], item[1], item[2] if len(item) > 2 else None))
            else:
                raise UsageError(f"bad ledger entry {item!r}")
    else:
        for line in csv.reader(io.StringIO(text)):
            if not line or not "".join(line).strip() or line[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in line]
            if cells[0] == "sensitivity":
                continue
            rows.append((cells[0], cells[1] if len(cells) > 1 else None,
                         cells[2] if len(cells) > 2 and cells[2] else None))
    ledger = CompositionLedger()
    for d, s, mech in rows:
        try:
            ledger = ledger_add(ledger, float(d), float(s), mech)
        except UnsupportedMechanismError:
            raise
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad ledger entry ({d}, {s}): {exc}") from exc
    return ledger


def cmd_compose(args) -> int:
    if not 0 < args.delta_tot < 1:
        raise UsageError("--delta-tot must lie in (0, 1)")
    try:
        ledger = read_ledger_file(args.ledger)
    except UnsupportedMechanismError as exc:
        raise UsageError(str(exc)) from exc
    eps = ledger_to_dp(ledger, args.delta_tot)
    out = {"entries": len(ledger), "rho_total": _num12(ledger.rho_total),
           "delta_total": args.delta_tot, "epsilon_total": _num12(eps)}
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _mech_args(p, need_budget=True):
    p.add_argument("--mech", required=True, choices=MECHANISMS)
    p.add_argument("--eps", type=float, required=need_budget)
    p.add_argument("--delta", type=float, required=need_budget)
    p.add_argument("--sens", type=float, default=1.0)
    p.add_argument("--k", type=int, default=None, help="multi-gaussian modality; default searches --k-grid")
    p.add_argument("--k-grid", default=None, help="comma-separated K candidates (default 1..20)")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--loss", choices=LOSSES, default="l1")
    p.add_argument("--out", default=None, help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpmix", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate one mechanism and print the result as JSON")
    _mech_args(p)
    p.add_argument("--no-verify", action="store_true", help="skip the independent DP check")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="calibrate a grid of budgets from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--no-verify", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sample", help="draw noise samples")
    _mech_args(p)
    p.add_argument("--sigma", type=float, default=None, help="noise scale; calibrated when absent")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="numerically check (eps, delta)-DP of a mechanism")
    _mech_args(p)
    p.add_argument("--sigma", type=float, default=None, help="noise scale; calibrated when absent")
    p.add_argument("--scale", type=float, default=1.0, help="multiply sigma by this factor")
    p.add_argument("--refine", type=float, default=2.0)
    p.add_argument("--quad-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compose", help="zCDP composition of Gaussian-type releases")
    p.add_argument("--ledger", required=True, help="file of (sensitivity, sigma[, mechanism]) entries")
    p.add_argument("--delta-tot", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compose)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
