"""Command-line entry point: ``srbflow <command> [--config PATH] [--out DIR] ...``.

Commands: verify, density, entropy, gradient, flow, spectral-lab. Summaries
are JSON, dense data is CSV. Outputs of a failed run keep a ``.failed``
suffix so they are never mistaken for results.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import fourier
from .config import RunConfig, load_config, parse_config  # noqa: F401  (re-exported)
from .entropy_gradient import entropy, gateaux_fd_check, gradient_vector, sobolev_inner
from .errors import ConfigError, SrbFlowError
from .flow import COLUMNS, EXPANSION_LOST, GRADIENT_UNAVAILABLE, STALLED, backward_probe, run_flow
from .linear_response import response_density, response_fd_check
from .parallel import thread_budget, thread_count
from .transfer_op import TransferContext, density_iterations, gap_estimate, srb_density
from .verify import run_all, run_spectral_lab, unit_sine

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

COMMANDS = ("verify", "density", "entropy", "gradient", "flow", "spectral-lab")


class CommandFailed(Exception):
    """A command ran but its result is a failure; ``lines`` go to stderr one per line."""

    def __init__(self, lines):
        self.lines = [lines] if isinstance(lines, str) else list(lines)
        super().__init__("; ".join(self.lines))


# serialization -------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"


class Outputs:
    """Collects files for one run and writes them, suffixed ``.failed`` on failure."""

    def __init__(self, directory: str):
        self.directory = directory
        self.written: list[str] = []

    def _path(self, name: str, failed: bool) -> str:
        os.makedirs(self.directory, exist_ok=True)
        path = os.path.join(self.directory, name + (".failed" if failed else ""))
        stale = os.path.join(self.directory, name if failed else name + ".failed")
        if os.path.exists(stale):
            os.remove(stale)
        self.written.append(path)
        return path

    def json(self, name: str, doc, failed: bool = False):
        with open(self._path(name, failed), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(doc))

    def csv(self, name: str, header, rows, failed: bool = False):
        with open(self._path(name, failed), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# commands --------------------------------------------------------------------

def _context(cfg: RunConfig) -> TransferContext:
    return TransferContext(cfg.map, cfg.numerics.grid_size, cfg.numerics.margin)


def cmd_density(cfg: RunConfig, args, out: Outputs) -> dict:
    ctx = _context(cfg)
    tol = cfg.numerics.tol
    rho = srb_density(ctx, tol).values
    nodes = fourier.nodes(ctx.dim, ctx.n).reshape(-1, ctx.dim)
    header = ("x", "rho") if ctx.dim == 1 else ("x", "y", "rho")
    out.csv("density.csv", header, (tuple(p) + (r,) for p, r in zip(nodes, rho.reshape(-1))))
    summary = {
        "command": "density", "seed": cfg.seed, "grid_size": ctx.n, "tol": tol,
        "min": float(rho.min()), "max": float(rho.max()), "integral": float(rho.mean()),
        "iterations": density_iterations(ctx, tol), "eta_hat": gap_estimate(ctx),
        "mu_min": ctx.mu_min,
    }
    out.json("density.json", summary)
    return summary


def _fd_report(ctx: TransferContext, cfg: RunConfig) -> dict:
    g = unit_sine(ctx.dim)
    fd = gateaux_fd_check(ctx, g, cfg.numerics.fd_step, cfg.numerics.tol)
    return {"direction": g.to_json(), "h": cfg.numerics.fd_step, **fd}


def cmd_entropy(cfg: RunConfig, args, out: Outputs) -> dict:
    ctx = _context(cfg)
    h = entropy(ctx)
    summary = {"command": "entropy", "seed": cfg.seed, "entropy": h,
               "upper_bound": math.log(abs(cfg.map.degree)), "grid_size": ctx.n}
    if args.fd:
        summary["fd"] = _fd_report(ctx, cfg)
    out.json("entropy.json", summary)
    return summary


def cmd_gradient(cfg: RunConfig, args, out: Outputs) -> dict:
    ctx = _context(cfg)
    metric = cfg.metric
    summary = {"command": "gradient", "seed": cfg.seed, "dim": ctx.dim, "k": metric.k,
               "cutoff": metric.cutoff, "entropy": entropy(ctx)}
    try:
        grad = gradient_vector(ctx, metric, cfg.numerics.tol, seed=cfg.seed)
    except SrbFlowError as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        out.json("gradient.json", summary, failed=True)
        raise
    summary.update({"modes": grad.field.to_json(), "hk_norm": grad.hk_norm,
                    "l2_pairing_check": grad.l2_pairing_check, "tail_bound": grad.tail_bound})
    if args.check_response:
        g = unit_sine(ctx.dim)
        res = response_density(ctx, g, cfg.numerics.tol)
        e1, e2, order = response_fd_check(ctx, g, cfg.numerics.fd_step, cfg.numerics.tol)
        summary["response_check"] = {"direction": g.to_json(), "h": cfg.numerics.fd_step,
                                     "error_h": e1, "error_h2": e2, "order": order,
                                     "terms_used": res.terms_used, "tail_bound": res.tail_bound}
    if args.fd:
        fd = _fd_report(ctx, cfg)
        fd["pairing"] = sobolev_inner(metric, grad.field, unit_sine(ctx.dim))
        summary["fd"] = fd
    out.json("gradient.json", summary)
    return summary


def cmd_flow(cfg: RunConfig, args, out: Outputs) -> dict:
    metric = cfg.metric
    num = cfg.numerics
    if args.backward:
        trace = backward_probe(cfg.map, metric, cfg.flow.max_steps, cfg.flow, num.grid_size, num.margin, num.tol)
        bad = {STALLED, GRADIENT_UNAVAILABLE}
    else:
        trace = run_flow(cfg.map, metric, cfg.flow, num.grid_size, num.margin, num.tol)
        bad = {EXPANSION_LOST, STALLED, GRADIENT_UNAVAILABLE}
    # an uncertified start leaves no rows at all; that is a failure either way
    failed = trace.status in bad or not trace.rows
    summary = {
        "command": "flow", "direction": "backward" if args.backward else "forward", "seed": cfg.seed,
        "status": trace.status, "message": trace.message, "steps": trace.steps,
        "accepted_steps": max(len(trace.accepted_rows) - 1, 0),
        "final_entropy": trace.rows[-1].entropy if trace.rows else None,
        "final_map": trace.final_map.to_json() if trace.final_map is not None else None,
        "cutoff": trace.cutoff, "k": trace.k,
    }
    out.csv("flow.csv", COLUMNS, (r.as_tuple() for r in trace.rows), failed=failed)
    out.json("flow.json", summary, failed=failed)
    if failed:
        raise CommandFailed(f"flow: {trace.status}: {trace.message}")
    return summary


def _suite_table(results) -> str:
    lines = [f"{'suite':<30} {'result':<6} {'max_residual':>13} {'limit':>9} {'seconds':>8}"]
    for r in results:
        lines.append(f"{r.name:<30} {'PASS' if r.passed else 'FAIL':<6} {r.max_residual:>13.3e} "
                     f"{r.limit:>9.1e} {r.seconds:>8.2f}")
    return "\n".join(lines)


def _suite_doc(command: str, seed: int, results) -> dict:
    # timings stay out of the files so repeated runs are byte-identical
    suites = []
    for r in results:
        d = r.as_dict()
        d.pop("seconds")
        suites.append(d)
    return {"command": command, "seed": seed, "passed": all(r.passed for r in results), "suites": suites}


def _finish_suites(command: str, seed: int, results, out: Outputs, name: str) -> dict:
    doc = _suite_doc(command, seed, results)
    failures = [r for r in results if not r.passed]
    out.json(name, doc, failed=bool(failures))
    table = _suite_table(results)
    if failures:
        exc = CommandFailed([
            f"{r.name}: {r.detail['error']}" if "error" in r.detail
            else f"{r.name}: residual {r.max_residual:.3e} exceeds {r.limit:.1e}"
            for r in failures
        ])
        exc.table, exc.doc = table, doc
        raise exc
    doc["_table"] = table
    return doc


def cmd_verify(cfg: RunConfig, args, out: Outputs) -> dict:
    return _finish_suites("verify", cfg.seed, run_all(cfg), out, "verify.json")


def cmd_spectral_lab(cfg: RunConfig | None, args, out: Outputs) -> dict:
    seed = cfg.seed if cfg is not None else args.seed
    return _finish_suites("spectral-lab", seed, run_spectral_lab(seed), out, "spectral_lab.json")


HANDLERS = {
    "verify": cmd_verify,
    "density": cmd_density,
    "entropy": cmd_entropy,
    "gradient": cmd_gradient,
    "flow": cmd_flow,
    "spectral-lab": cmd_spectral_lab,
}


# argument handling ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srbflow", description="SRB entropy gradient lab for expanding torus maps.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "verify": "run every invariant and oracle suite",
        "density": "SRB density on the grid (CSV + JSON summary)",
        "entropy": "metric entropy of the SRB measure",
        "gradient": "entropy gradient in the H^k metric",
        "flow": "entropy gradient flow trace",
        "spectral-lab": "spectral projector checks on random gapped matrices",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH", required=name != "spectral-lab",
                       help="JSON run configuration")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default: output.dir from the config, else ./out)")
        p.add_argument("--json", action="store_true", help="print a machine-readable summary")
        if name in ("entropy", "gradient"):
            p.add_argument("--fd", action="store_true", help="also run the finite-difference oracle")
        if name == "gradient":
            p.add_argument("--check-response", action="store_true",
                           help="compare the density response with a finite difference")
        if name == "flow":
            p.add_argument("--backward", action="store_true", help="run the flow with negative time steps")
        if name == "spectral-lab":
            p.add_argument("--seed", type=int, default=0, help="seed when no config is given")
    return parser


def _print_human(command: str, summary: dict):
    if command == "entropy":
        print(f"entropy {summary['entropy']!r}")
        print(f"upper bound log|det A| {summary['upper_bound']!r}")
        if "fd" in summary:
            fd = summary["fd"]
            print(f"DH(f)g {fd['derivative']!r}  central FD {fd['fd_h']!r} (h={fd['h']:g})  "
                  f"error {fd['error_h']:.3e}, {fd['error_h2']:.3e} at h/2, order {fd['order']}")
    elif command == "density":
        print(f"density min {summary['min']:.12g} max {summary['max']:.12g} integral {summary['integral']!r} "
              f"iterations {summary['iterations']} eta_hat {summary['eta_hat']:.6g}")
    elif command == "gradient":
        print(f"entropy {summary['entropy']!r}")
        print(f"||grad H||_Hk {summary['hk_norm']:.6e} (k={summary['k']}, cutoff={summary['cutoff']}) "
              f"pairing check {summary['l2_pairing_check']:.3e} tail bound {summary['tail_bound']:.3e}")
        for mode in summary["modes"]:
            print(f"  i={mode['i']} m={mode['m']} cos={mode['cos']:+.6e} sin={mode['sin']:+.6e}")
        if "response_check" in summary:
            r = summary["response_check"]
            print(f"response FD error {r['error_h']:.3e} (h), {r['error_h2']:.3e} (h/2), order {r['order']}")
        if "fd" in summary:
            fd = summary["fd"]
            print(f"DH(f)g {fd['derivative']!r} central FD {fd['fd_h']!r} <grad H, g>_Hk {fd['pairing']!r}")
    elif command == "flow":
        print(f"{summary['direction']} flow: {summary['status']} after {summary['steps']} steps; "
              f"final entropy {summary['final_entropy']!r}")
    else:
        print(summary.pop("_table"))
    print("seed", summary["seed"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        thread_count()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config) if args.config else None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = args.out or (cfg.output_dir if cfg is not None and cfg.output_dir else None) or "./out"
    out = Outputs(out_dir)
    handler = HANDLERS[args.command]
    try:
        with thread_budget():
            summary = handler(cfg, args, out)
    except CommandFailed as exc:
        if getattr(exc, "table", None) and not args.json:
            print(exc.table)
        if args.json:
            print(dumps(getattr(exc, "doc", {"command": args.command, "errors": exc.lines})), end="")
        for line in exc.lines:
            print(f"FAIL {line}", file=sys.stderr)
        return EXIT_FAILURE
    except SrbFlowError as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.json:
        summary.pop("_table", None)
        print(dumps(summary), end="")
    else:
        _print_human(args.command, summary)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())


__all__ = ["main", "build_parser", "parse_config", "COMMANDS"]
