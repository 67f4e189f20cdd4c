"""Command-line driver: verify, repair, predict, eval, sweep-eta.

Exit codes: 0 success (verified / every partition handled), 1 property not
established (unknown verdict, failed partitions, bad prediction rows),
2 usage or input errors.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from pinrepair import evaluation
from pinrepair.cex import CexConfig
from pinrepair.model import FormatError, Network, load_network
from pinrepair.piecewise import PiecewiseModel, dispatch, load_piecewise, save_piecewise
from pinrepair.property import Property, check_compatible, parse_property
from pinrepair.repair import RepairParams, RepairReport, overall
from pinrepair.verifier import bound_output_expr, check

log = logging.getLogger("pinrepair")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
DEFAULT_ETAS = tuple(round(0.05 * k, 2) for k in range(1, 11))


class UsageError(Exception):
    pass


def report_schema(name: str) -> dict:
    """JSON schema shipped for the ``name`` report (verify, repair, sweep, eval, predict)."""
    return json.loads(importlib.resources.files("pinrepair").joinpath("schemas", f"{name}.json").read_text())


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _write_or_print(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_inputs(args) -> tuple[Network, Property]:
    for p in (args.network, args.property):
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")
    net = load_network(Path(args.network))
    prop = parse_property(Path(args.property))
    try:
        check_compatible(prop, net.input_dim, net.output_dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return net, prop


def _load_model(path: str) -> PiecewiseModel:
    """Piecewise JSON, network JSON, or NNet; plain networks get no patches."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    if p.suffix.lower() != ".nnet":
        data = json.loads(p.read_text())
        if isinstance(data, dict) and "patches" in data:
            return load_piecewise(p)
    return PiecewiseModel(load_network(p))


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}") from None


# --------------------------------------------------------------------------
# verify

def verify_report(net: Network, prop: Property) -> dict:
    verdict = check(net, prop)
    b = verdict.bounds
    disjuncts = []
    for conj in prop.output.expand(net.output_dim):
        disjuncts.append([list(bound_output_expr(net, prop.input, a, b)) for a in conj])
    return {
        "property": prop.name,
        "verdict": verdict.status,
        "output_bounds": {"lower": b.output_lower.tolist(), "upper": b.output_upper.tolist()},
        "assertion_bounds": disjuncts,
    }


def cmd_verify(args) -> int:
    net, prop = _load_inputs(args)
    report = verify_report(net, prop)
    if args.dump_bounds:
        report["bounds"] = check(net, prop).bounds.to_records()
    _write_or_print(_dump(report), args.out)
    return EXIT_OK if report["verdict"] == "verified" else EXIT_FAIL


# --------------------------------------------------------------------------
# repair

def _params(args) -> RepairParams:
    return RepairParams(
        eta=args.eta,
        alpha=args.alpha,
        alpha_frac=args.alpha_frac,
        beta=args.beta,
        max_depth=args.max_depth,
        timeout=args.timeout_region,
    )


def _cex_cfg(args) -> CexConfig:
    return CexConfig(restarts=args.cex_restarts, steps=args.cex_steps, seed=args.seed)


def run_repair(net: Network, prop: Property, args, eta: float | None = None) -> tuple[PiecewiseModel, RepairReport]:
    params = _params(args)
    if eta is not None:
        params = RepairParams(eta=eta, alpha=params.alpha, alpha_frac=params.alpha_frac, beta=params.beta,
                              max_depth=params.max_depth, timeout=params.timeout)
    deadline = time.monotonic() + args.timeout if args.timeout else None
    return overall(net, prop, params, _cex_cfg(args), jobs=args.jobs, deadline=deadline)


def _summary_table(rows: list[list[str]], header: list[str]) -> str:
    cols = [header] + rows
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cols]
    return "\n".join(lines) + "\n"


def cmd_repair(args) -> int:
    net, prop = _load_inputs(args)
    t0 = time.monotonic()
    pw, report = run_repair(net, prop, args)
    elapsed = time.monotonic() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_piecewise(pw, out / "piecewise.json")
    (out / "report.json").write_text(_dump(report.to_dict(timing=args.timing)))
    rows = [
        [str(i), o.status, str(o.depth), str(o.modified_neurons), str(o.iterations), o.reason or "-"]
        for i, o in enumerate(report.outcomes)
    ]
    sys.stdout.write(_summary_table(rows, ["region", "status", "depth", "modified", "iters", "reason"]))
    avg = report.avg_modified
    sys.stdout.write(
        f"success_rate={report.success_rate:.4f} avg_modified={'-' if avg is None else f'{avg:.2f}'} "
        f"patches={len(pw.patches)} elapsed={elapsed:.2f}s\n"
    )
    return EXIT_OK if report.all_ok else EXIT_FAIL


# --------------------------------------------------------------------------
# predict

def cmd_predict(args) -> int:
    pw = _load_model(args.model)
    rows: list[np.ndarray] = []
    if args.input:
        rows.extend(_parse_vector(v) for v in args.input)
    if args.csv:
        for line in Path(args.csv).read_text().splitlines():
            if line.strip():
                rows.append(_parse_vector(line))
    if not rows:
        raise UsageError("give --input or --csv")
    status = EXIT_OK
    results = []
    for i, x in enumerate(rows):
        if x.size != pw.base.input_dim:
            sys.stderr.write(f"row {i}: expected {pw.base.input_dim} values, got {x.size}\n")
            results.append({"row": i, "error": "dimension mismatch"})
            status = EXIT_FAIL
            continue
        y = dispatch(pw, x)
        label = int(np.argmax(y))
        results.append({"row": i, "scores": y.tolist(), "label": label})
        sys.stdout.write(f"{label}\t" + " ".join(repr(float(v)) for v in y) + "\n")
    if args.out:
        Path(args.out).write_text(_dump({"predictions": results}))
    return status


# --------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    orig = load_network(Path(args.original))
    pw = _load_model(args.model)
    report: dict = {"mode": args.mode}
    if args.mode == "fidelity":
        if not args.property:
            raise UsageError("fidelity needs --property")
        prop = parse_property(Path(args.property))
        data = evaluation.synthesize_gaussian(orig, prop, None, args.samples, args.seed)
        if args.save_data:
            data.to_csv(args.save_data)
        report["samples"] = len(data)
        report["fidelity"] = evaluation.fidelity(orig, pw, data)
    elif args.mode == "accr":
        if not args.data:
            raise UsageError("accr needs --data")
        data = evaluation.Dataset.from_csv(args.data)
        report["samples"] = len(data)
        report["accR"] = evaluation.accR(orig, pw, data)
    else:
        if args.center is None or args.tau is None or args.label is None:
            raise UsageError("local needs --center, --tau and --label")
        clip = None if args.no_clip else (args.clip_low, args.clip_high)
        report["samples"] = args.samples
        report["local_accuracy"] = evaluation.local_accuracy(
            pw, _parse_vector(args.center), args.tau, args.label, args.samples, args.seed, clip
        )
    _write_or_print(_dump(report), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep-eta

def sweep_rows(net: Network, prop: Property, args, etas) -> list[dict]:
    data = evaluation.synthesize_gaussian(net, prop, None, args.samples, args.seed)
    rows = []
    for eta in etas:
        t0 = time.monotonic()
        pw, report = run_repair(net, prop, args, eta)
        row = {
            "eta": eta,
            "success_rate": report.success_rate,
            "avg_modified": report.avg_modified,
            "patches": len(pw.patches),
            "failed": len(report.failed),
            "fidelity": evaluation.fidelity(net, pw, data),
        }
        elapsed = time.monotonic() - t0
        if args.timing:
            row["elapsed_s"] = round(elapsed, 3)
        row["_elapsed"] = elapsed
        rows.append(row)
    return rows


def cmd_sweep_eta(args) -> int:
    net, prop = _load_inputs(args)
    etas = [float(e) for e in args.etas] if args.etas else list(DEFAULT_ETAS)
    if not etas:
        raise UsageError("need at least one eta")
    rows = sweep_rows(net, prop, args, etas)
    text_rows = [
        [f"{r['eta']:g}", f"{r['success_rate']:.4f}",
         "-" if r["avg_modified"] is None else f"{r['avg_modified']:.2f}",
         f"{r['fidelity']:.4f}", f"{r.pop('_elapsed'):.2f}"]
        for r in rows
    ]
    sys.stdout.write(_summary_table(text_rows, ["eta", "success_rate", "avg_modified", "fidelity", "elapsed_s"]))
    table = {"property": prop.name, "samples": args.samples, "seed": args.seed, "rows": rows}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(_dump(table))
    return EXIT_OK if all(r["failed"] == 0 for r in rows) else EXIT_FAIL


# --------------------------------------------------------------------------

def _add_repair_flags(p: argparse.ArgumentParser):
    p.add_argument("--network", required=True)
    p.add_argument("--property", required=True)
    p.add_argument("--eta", type=float, default=0.35, help="pin step size")
    p.add_argument("--alpha-frac", type=float, default=0.05,
                   help="max distinct modified neurons as a fraction of hidden neurons (ceil, at least 1)")
    p.add_argument("--alpha", type=int, default=None, help="absolute neuron budget; overrides --alpha-frac")
    p.add_argument("--beta", type=int, default=50, help="max modifications per neuron")
    p.add_argument("--max-depth", type=int, default=4, help="bisection depth budget")
    p.add_argument("--timeout-region", type=float, default=None, help="seconds per region")
    p.add_argument("--timeout", type=float, default=3600.0, help="global budget in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cex-restarts", type=int, default=32)
    p.add_argument("--cex-steps", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for leaf repairs")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock times in the JSON output (breaks byte-identical reruns)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinrepair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check a property with DeepPoly bounds")
    p.add_argument("--network", required=True)
    p.add_argument("--property", required=True)
    p.add_argument("--dump-bounds", action="store_true", help="include per-neuron bounds")
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("repair", help="partition, find counterexamples, and repair")
    _add_repair_flags(p)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("predict", help="evaluate a network or piecewise model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", action="append", help="comma-separated input vector (repeatable)")
    p.add_argument("--csv", help="file with one comma-separated input per line")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="fidelity, relative accuracy, or local accuracy")
    p.add_argument("--original", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("fidelity", "accr", "local"), required=True)
    p.add_argument("--property", help="fidelity: property used to synthesize the test set")
    p.add_argument("--data", help="accr: CSV with label,feature_0,...")
    p.add_argument("--center")
    p.add_argument("--tau", type=float)
    p.add_argument("--label", type=int)
    p.add_argument("--clip-low", type=float, default=0.0)
    p.add_argument("--clip-high", type=float, default=1.0)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-data", help="fidelity: write the synthesized set as CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-eta", help="repair once per step size and tabulate")
    _add_repair_flags(p)
    p.add_argument("--etas", nargs="+", help="step sizes (default 0.05 ... 0.5)")
    p.add_argument("--samples", type=int, default=10000, help="fidelity test-set size")
    p.set_defaults(func=cmd_sweep_eta)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FormatError, evaluation.InfeasibleSpec, OSError, ValueError, ZeroDivisionError) as exc:
        sys.stderr.write(f"pinrepair {args.command}: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
