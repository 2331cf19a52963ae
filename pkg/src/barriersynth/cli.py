"""Command-line driver: ``synth``, ``check`` and ``bench``.

Exit codes: 0 on success, 2 when no validated certificate was found (or a
check failed), 1 on errors.  Errors are reported on stderr as one JSON
object per line.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import multiprocessing as mp
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .certcheck import Certificate, export_smt, sample_region, simulate_trajectory, validate, write_json
from .conicback import BACKENDS
from .polycore import PolyError, parse_poly
from .problemdef import ProblemError, ProblemSpec, load_problem
from .synth import SynthResult, synthesize

log = logging.getLogger("barriersynth")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
BENCH_COLUMNS = ("name", "n_sys", "d_flow", "d_BC", "iterations", "time", "verified", "certificate")
TIMING_FIELDS = ("time", "encode_time", "validate_time", "total_time")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _diag(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _setup_logging() -> None:
    level = os.environ.get("BARRIER_SYNTH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s")


# ---------------------------------------------------------------------------
# problem resolution


def corpus_dir() -> Path:
    return Path(str(resources.files("barriersynth") / "corpus"))


def corpus_names() -> list[str]:
    return sorted(p.stem for p in corpus_dir().glob("*.json"))


def resolve_problem(ref: str) -> Path:
    """A path to a problem file, or the name of a bundled example."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = corpus_dir() / (p.stem + ".json")
    if bundled.exists():
        return bundled
    raise CliError("not_found", f"no problem file or bundled example named {ref!r}")


def _load(ref: str) -> ProblemSpec:
    path = resolve_problem(ref)
    try:
        return load_problem(path)
    except (ProblemError, json.JSONDecodeError) as exc:
        raise CliError("bad_problem", f"{path}: {exc}") from exc


def apply_overrides(spec: ProblemSpec, args) -> ProblemSpec:
    changes = {}
    if getattr(args, "encoding", None):
        changes["encoding"] = args.encoding
    if getattr(args, "lie_order", None):
        changes["lie_order"] = args.lie_order
    if getattr(args, "max_iter", None) is not None:
        changes["dcp"] = dataclasses.replace(spec.dcp, max_iter=args.max_iter)
    if getattr(args, "eta", None) is not None:
        changes["bnb"] = dataclasses.replace(spec.bnb, eta=args.eta)
    if not changes:
        return spec
    try:
        return spec.with_(**changes)
    except (ProblemError, ValueError) as exc:
        raise CliError("bad_problem", str(exc)) from exc


# ---------------------------------------------------------------------------
# synth


def write_artifacts(res: SynthResult, out_dir: Path, emit_smt: bool, emit_traj: bool, seed: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    cert = res.certificate or res.candidate
    doc = {"status": res.status, "summary": res.summary(),
           "certificate": None if cert is None else cert.to_dict(),
           "validation": None if res.report is None else res.report.to_dict()}
    path = out_dir / "certificate.json"
    write_json(path, doc)
    written.append(path)
    if res.trace is not None:
        path = out_dir / "trace.jsonl"
        res.trace.write_jsonl(path)
        written.append(path)
    if emit_smt and cert is not None:
        written += export_smt(res.spec, cert, out_dir / "smt", res.lie_order)
    if emit_traj:
        written += write_trajectories(res.spec, cert, out_dir / "traj", seed)
    return written


def write_trajectories(spec: ProblemSpec, cert: Certificate | None, out_dir: Path, seed: int,
                       count: int = 4, t_end: float = 5.0, h: float = 1e-3) -> list[Path]:
    """RK4 runs from a few initial states, as CSV with the value of B attached."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    X0 = sample_region(spec.init, spec.domain_box, 2000, rng)[:count]
    paths = []
    for k, x0 in enumerate(X0):
        tr = simulate_trajectory(spec.field, x0, t_end, h, None if cert is None else cert.poly, box=spec.domain_box)
        path = out_dir / f"traj{k}.csv"
        tr.write_csv(path, spec.vars)
        paths.append(path)
    return paths


def cmd_synth(args) -> int:
    spec = apply_overrides(_load(args.problem), args)
    res = synthesize(spec, backend=args.backend, seed=args.seed, timeout=args.timeout_secs)
    out_dir = Path(args.out_dir) / spec.name
    write_artifacts(res, out_dir, args.emit_smt, args.emit_traj, args.seed)
    print(json.dumps(res.summary(), indent=2))
    if res.verified:
        return EXIT_OK
    _diag(res.status, f"no validated certificate for {spec.name}", iterations=res.iterations)
    return EXIT_FAIL


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    spec = apply_overrides(_load(args.problem), args)
    try:
        B = parse_poly(args.certificate, spec.vars)
    except PolyError as exc:
        raise CliError("parse", f"certificate: {exc}") from exc
    N = args.lie_order or spec.lie_order
    rep = validate(spec, Certificate(B, N, problem=spec.name), n_samples=args.samples, seed=args.seed, lie_order=N)
    print(json.dumps({"name": spec.name, "certificate": str(B), "lie_order": N, **rep.to_dict()}, indent=2))
    if rep.valid:
        return EXIT_OK
    for name in rep.failed():
        c = rep[name]
        _diag("check_failed", f"condition {name} violated", condition=name,
              witness=None if c.witness is None else [float(v) for v in c.witness], worst=c.worst)
    return EXIT_FAIL


# ---------------------------------------------------------------------------
# bench


def bench_row(spec: ProblemSpec, res: SynthResult | None, error: str | None = None) -> dict:
    """One report row; ``time`` is the solve time with encoding excluded."""
    row = {
        "name": spec.name,
        "n_sys": len(spec.vars),
        "d_flow": spec.field.degree,
        "d_BC": spec.template_poly().degree(),
        "iterations": None,
        "time": None,
        "verified": False,
        "certificate": None,
        "status": "error" if error else None,
        "encode_time": None,
        "validate_time": None,
        "total_time": None,
        "max_residual": None,
        "lambda_monotone": None,
        "error": error,
    }
    if res is None:
        return row
    traces = res.traces
    resid = [p.residual for tr in traces for p in tr.points]
    mono = all(b.lam >= a.lam - 1e-9 for tr in traces for a, b in zip(tr.points, tr.points[1:]))
    cert = res.certificate or res.candidate
    row.update(
        iterations=res.iterations,
        time=res.timings["solve"],
        verified=res.verified,
        certificate=None if cert is None else str(cert.poly),
        status=res.status,
        encode_time=res.timings["encode"],
        validate_time=res.timings["validate"],
        total_time=res.timings["total"],
        max_residual=max(resid) if resid else None,
        lambda_monotone=mono,
    )
    return row


def _bench_worker(path: str, backend: str, seed: int, timeout: float, conn) -> None:
    try:
        spec = load_problem(path)
        res = synthesize(spec, backend=backend, seed=seed, timeout=timeout)
        conn.send(("ok", bench_row(spec, res)))
    except Exception as exc:  # reported, the harness keeps going
        conn.send(("error", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def run_bench(paths: list[Path], backend: str = "clarabel", seed: int = 0, timeout: float = 120.0,
              jobs: int = 1) -> list[dict]:
    """Run every problem in its own process, at most ``jobs`` at a time."""
    ctx = mp.get_context("spawn" if sys.platform == "darwin" else "fork")
    pending = list(enumerate(paths))
    running: dict[int, tuple] = {}
    rows: dict[int, dict] = {}
    while pending or running:
        while pending and len(running) < max(jobs, 1):
            k, path = pending.pop(0)
            recv, send = ctx.Pipe(duplex=False)
            proc = ctx.Process(target=_bench_worker, args=(str(path), backend, seed, timeout, send))
            proc.start()
            send.close()
            running[k] = (proc, recv, path, time.monotonic())
        for k, (proc, recv, path, t0) in list(running.items()):
            msg = None
            if recv.poll():
                try:
                    msg = recv.recv()
                except EOFError:
                    msg = ("error", "worker exited without a result")
            elif not proc.is_alive():
                msg = ("error", f"worker exited with code {proc.exitcode}")
            elif time.monotonic() - t0 > timeout + 10:
                proc.kill()
                msg = ("error", f"timeout after {timeout:g} s")
            if msg is None:
                continue
            proc.join()
            spec = load_problem(path)
            if msg[0] == "ok":
                rows[k] = msg[1]
            else:
                rows[k] = bench_row(spec, None, msg[1])
                if msg[1].startswith("timeout"):
                    rows[k]["status"] = "timeout"
            del running[k]
            _progress(rows[k])
        time.sleep(0.02)
    return [rows[k] for k in sorted(rows)]


def _progress(row: dict) -> None:
    log.info(json.dumps({"event": "bench", "name": row["name"], "status": row["status"],
                         "iterations": row["iterations"]}))


def format_table(rows: list[dict]) -> str:
    head = ["name", "n_sys", "d_flow", "d_BC", "#iter", "time", "verified"]
    body = []
    for r in rows:
        body.append([
            r["name"], str(r["n_sys"]), str(r["d_flow"]), str(r["d_BC"]),
            "-" if r["iterations"] is None else str(r["iterations"]),
            "-" if r["time"] is None else f"{r['time']:.2f}",
            "yes" if r["verified"] else ("timeout" if r["status"] == "timeout" else "no"),
        ])
    widths = [max(len(x) for x in col) for col in zip(head, *body)] if body else [len(h) for h in head]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body])


def write_bench(rows: list[dict], out_dir: Path, meta: dict) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out_dir / "bench.json", out_dir / "bench.csv"
    with open(jpath, "w") as fh:
        json.dump({"meta": meta, "rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r[c] if r[c] is not None else "" for c in BENCH_COLUMNS])
    return jpath, cpath


def cmd_bench(args) -> int:
    if args.directory is None:
        root = corpus_dir()
    else:
        root = Path(args.directory)
        if not root.is_dir():
            raise CliError("not_found", f"{root} is not a directory")
    paths = sorted(root.glob("*.json"))
    if args.only:
        keep = set(args.only)
        paths = [p for p in paths if p.stem in keep]
    rows = run_bench(paths, args.backend, args.seed, args.timeout_secs or 120.0, args.jobs)
    meta = {"backend": args.backend, "seed": args.seed, "timeout": args.timeout_secs or 120.0,
            "version": __version__, "directory": str(root)}
    write_bench(rows, Path(args.out_dir) / "bench", meta)
    print(format_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="barrier-synth", description="Invariant barrier certificate synthesis.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", default="clarabel", choices=sorted(BACKENDS))
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--timeout-secs", type=float, default=None)
    common.add_argument("--out-dir", default="out")

    enc = argparse.ArgumentParser(add_help=False)
    enc.add_argument("--encoding", choices=("sufficient", "necessary"))
    enc.add_argument("--lie-order", type=int)

    p = sub.add_parser("synth", parents=[common, enc], help="synthesize a certificate")
    p.add_argument("problem")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--emit-smt", action="store_true")
    p.add_argument("--emit-traj", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("check", parents=[common, enc], help="validate a given certificate")
    p.add_argument("problem")
    p.add_argument("--certificate", required=True, help="polynomial in the problem variables; write --certificate=-x2 for a leading minus")
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", parents=[common], help="run a directory of problems")
    p.add_argument("directory", nargs="?")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--only", nargs="*")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _diag(exc.kind, str(exc))
        return EXIT_ERROR
    except (ProblemError, PolyError) as exc:
        _diag("bad_input", str(exc))
        return EXIT_ERROR
    except Exception as exc:
        _diag("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
