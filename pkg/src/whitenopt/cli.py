"""``whitenopt`` command line: run, sweep, verify, grad-check.

Exit codes: 0 success, 1 usage/config error (or failed checks), 2 numerical
divergence, 130 interrupted.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from whitenopt import harness, models, verify

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INTERRUPTED = 0, 1, 2, 130

log = logging.getLogger("whitenopt")


class UsageError(Exception):
    pass


def _readable(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file() or not os.access(p, os.R_OK):
        raise UsageError(f"cannot read {what} {p}")
    return p


def _writable_file(path: str) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if p.is_dir():
        raise UsageError(f"output path {p} is a directory")
    if not parent.is_dir() or not os.access(parent, os.W_OK) or (p.exists() and not os.access(p, os.W_OK)):
        raise UsageError(f"cannot write output {p}")
    return p


def _writable_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc.strerror}") from None
    if not os.access(p, os.W_OK):
        raise UsageError(f"cannot write to output directory {p}")
    return p


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "corpus", None) is not None:
        out["corpus_path"] = str(_readable(args.corpus, "corpus"))
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write output {path}: {exc.strerror}") from None


def cmd_run(args) -> int:
    config_path = _readable(args.config, "config")
    out = _writable_file(args.out)
    cfg = harness.load_config(config_path, _overrides(args))
    resume = harness.Checkpoint.load(_readable(args.resume, "checkpoint")) if args.resume else None
    checkpoint_out = _writable_file(args.checkpoint) if args.checkpoint else None

    if cfg.lr_grid:
        if resume is not None or args.stop_at is not None:
            raise UsageError("--resume/--stop-at need a single learning rate, not a grid")
        result = harness.tune_lr(cfg)
        trace = result.best
        for lr, t in result.by_lr.items():
            log.info("lr %.6g: %s, final loss %.6g", lr, t.status, t.final_train_loss)
    else:
        progress = (lambda k, loss: log.debug("step %d loss %.6g", k, loss)) if args.verbose > 1 else None
        trace = harness.run_experiment(cfg, resume=resume, stop_at=args.stop_at, timing=args.timing, progress=progress)
    _write(out, trace.to_csv())
    if checkpoint_out is not None and trace.checkpoint is not None:
        trace.checkpoint.save(checkpoint_out)
    print(f"status={trace.status} records={len(trace.records)} lr={trace.lr!r} final_train_loss={trace.final_train_loss!r}")
    if trace.status == "diverged":
        log.error("%s", trace.marker)
        return EXIT_DIVERGED
    if trace.status == "interrupted":
        log.warning("%s; partial trace written to %s", trace.marker, out)
        return EXIT_INTERRUPTED
    return EXIT_OK


def _safe_name(config_id: str) -> str:
    return "".join(c if c.isalnum() or c in "=._-" else "_" for c in config_id)


def cmd_sweep(args) -> int:
    config_path = _readable(args.config, "config")
    out_dir = _writable_dir(args.out)
    pairs = harness.parse_config_text(config_path.read_text(), str(config_path))
    if not harness.sweep_axes(pairs):
        raise UsageError(f"{config_path} has no sweep axis (e.g. 'opt.precond_freq = 1, 10')")
    configs = harness.expand_configs(pairs, _overrides(args))
    results = harness.sweep(configs)
    for i, r in enumerate(results):
        if r.trace is not None:
            _write(out_dir / f"{i:03d}_{_safe_name(r.config_id)}.csv", r.trace.to_csv())
        status = r.summary.get("status")
        print(f"{r.config_id}: {status}" + (f" ({r.error})" if r.error else ""))
    _write(out_dir / "summary.csv", harness.summary_csv(results))
    if any(r.error for r in results):
        return EXIT_CONFIG
    if any(r.trace is not None and r.trace.diverged for r in results):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_invariants(cases=args.cases, max_dim=args.max_dim, seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("failed: %s", ", ".join(failed))
        return EXIT_CONFIG
    return EXIT_OK


def cmd_grad_check(args) -> int:
    worst = models.grad_check(seeds=args.cases or 20, base_seed=args.seed or 0)
    ok = True
    for kind, err in worst.items():
        tol = models.GRAD_TOLERANCES[kind]
        passed = err <= tol
        ok &= passed
        print(f"{kind:<18} {err:.3e}  <= {tol:.0e}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="errors only")
    common.add_argument("--seed", type=int, default=None, help="override run.seed / base seed")

    parser = argparse.ArgumentParser(prog="whitenopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="train one config and write its trace CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True, help="trace CSV path")
    run.add_argument("--corpus", help="plain-text corpus for bigram_lm")
    run.add_argument("--timing", action="store_true", help="fill elapsed_s (makes output non-reproducible)")
    run.add_argument("--checkpoint", help="write a resumable checkpoint here when the run stops early")
    run.add_argument("--resume", help="continue from a checkpoint")
    run.add_argument("--stop-at", type=int, help="stop after this step and checkpoint")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", parents=[common], help="run every combination of the config's comma-list axes")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", required=True, help="output directory")
    sw.add_argument("--corpus", help="plain-text corpus for bigram_lm")
    sw.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    ver.add_argument("--cases", type=int, default=200)
    ver.add_argument("--max-dim", type=int, default=5)
    ver.set_defaults(func=cmd_verify)

    gc = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every model kind")
    gc.add_argument("--cases", type=int, default=20, help="number of seeds")
    gc.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for divergence here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        # ValueError covers config errors, bad checkpoints and unusable corpora
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
