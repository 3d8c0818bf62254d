"""Command-line entry point: synth, train, eval, gradcheck, bench, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 check failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import BACKEND, bench, checkpoint, gradcheck, pipeline
from .accounting import count_flops, count_params
from .config import ABLATIONS, RunConfig
from .dataio import read_container, synth_spectral, write_container
from .errors import ConfigError, DataError
from .model import build_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("biomamba")


class CheckFailed(Exception):
    pass


def default_seed(fallback: int) -> int:
    raw = os.environ.get("BIOMAMBA_SEED")
    if raw is None or raw == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"BIOMAMBA_SEED must be an integer, got {raw!r}") from None


def load_run(path, ablations=(), seed=None) -> RunConfig:
    """Config file (or defaults), then ablations, then the seed: flag, else BIOMAMBA_SEED, else file."""
    run = RunConfig.load(path) if path else RunConfig()
    for name in ablations or ():
        run.apply_ablation(name)
    run.seed = seed if seed is not None else default_seed(run.seed)
    return run


def cmd_synth(args) -> int:
    ds = synth_spectral(args.subjects, args.trials, args.T, args.C, args.freq_hz, args.fs_hz,
                        args.snr, default_seed(0) if args.seed is None else args.seed)
    try:
        write_container(args.out, ds)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {len(ds)} records to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run(args.config, args.ablation, args.seed)
    ds = read_container(args.data)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None

    def progress(rec):
        log.info("epoch %3d  loss %.5f  val_acc %.4f  val_f1 %.4f",
                 rec["epoch"], rec["train_loss"], rec["val_accuracy"], rec["val_f1"])

    res = pipeline.fit(run, ds, on_epoch=progress)
    (out / "config.resolved").write_text(res.run.to_text())
    checkpoint.save(out / "model.bmv1", res.model, res.run)
    (out / "history.csv").write_text(pipeline.history_csv(res.result.history))
    (out / "metrics.csv").write_text(res.report.to_csv())
    print(f"subjects train={res.split.train_subjects} val={res.split.val_subjects} test={res.split.test_subjects}")
    print(f"best epoch {res.result.best_epoch} (val accuracy {res.result.best_val_accuracy:.4f})")
    print(res.report.to_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, run = checkpoint.load(args.model)
    ds = read_container(args.data)
    pipeline.resolve(run, ds)
    part = pipeline.pick(pipeline.split(run, ds), ds, args.split)
    report = pipeline.score(model, part, args.split, run.train.weighted_f1)
    print(report.to_text(), end="")
    print(report.to_csv(), end="")
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = gradcheck.toy_config()
    if args.config:
        cfg = RunConfig.load(args.config).model
    modules = args.module or None
    for m in modules or ():
        if m not in gradcheck.MODULES:
            raise ConfigError(f"unknown module {m!r}; choose from {', '.join(gradcheck.MODULES)}")
    results = gradcheck.run_suite(cfg, seed=default_seed(0) if args.seed is None else args.seed, modules=modules)
    for r in results:
        flag = "ok  " if r.error < args.tolerance else "FAIL"
        print(f"{flag} {r.module:9s} {r.name:28s} max_rel_err={r.error:.3e} n={r.elements}")
    w = gradcheck.worst(results)
    if w is None:
        raise ConfigError("no checks selected")
    print(f"worst: {w.module}/{w.name} {w.error:.3e} (tolerance {args.tolerance:g}, backend {BACKEND})")
    if w.error >= args.tolerance:
        raise CheckFailed(f"gradient check failed: {w.module}/{w.name} max relative error {w.error:.3e}")
    return EXIT_OK


def _lengths(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --lengths {text!r}") from None
    if len(vals) < 2 or min(vals) < 1:
        raise ConfigError("--lengths needs at least two positive lengths")
    return vals


def cmd_bench(args) -> int:
    lengths = _lengths(args.lengths)
    if args.repeat < 1:
        raise ConfigError("--repeat must be >= 1")
    rows = bench.run(lengths, args.repeat)
    text = ",".join(bench.CSV_COLUMNS) + "\n" + "\n".join(r.csv() for r in rows) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    for comp in ("scan", "forward"):
        sel = [r for r in rows if r.component == comp]
        slope = bench.scaling_exponent([r.length for r in sel], [r.median_ms for r in sel])
        print(f"# {comp} scaling exponent {slope:.3f} (backend {BACKEND})")
    return EXIT_OK


def cmd_report(args) -> int:
    run = load_run(args.config, args.ablation, 0)
    m = run.model
    for key in ("seq_len", "n_channels", "n_classes"):
        override = getattr(args, key)
        if override is not None:
            setattr(m, key, override)
    model = build_model(m, seed=0)
    params = count_params(model)
    flops = count_flops(model, args.batch)
    print(f"# tokens {m.n_tokens}  blocks {m.n_blocks}  d_model {m.d_model}")
    for name, (alloc, active) in params.groups.items():
        print(f"param {name} allocated={alloc} active={active}")
    print(f"params_allocated = {params.allocated}")
    print(f"params_active = {params.active}")
    for name, value in flops.modules.items():
        print(f"flops {name} = {value}")
    print(f"flops_sparse_dense = {flops.sparse_dense}")
    print(f"flops_sparse_active = {flops.sparse_active}")
    print(f"flops_total_dense = {flops.dense}")
    print(f"flops_total_active = {flops.active}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biomamba", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic two-class spectral dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=8)
    s.add_argument("--trials", type=int, default=100, help="trials per class per subject")
    s.add_argument("--T", type=int, default=256)
    s.add_argument("--C", type=int, default=4)
    s.add_argument("--freq-hz", type=float, default=10.0)
    s.add_argument("--fs-hz", type=float, default=128.0)
    s.add_argument("--snr", type=float, default=3.0)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a BSG1 dataset")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", action="append", choices=ABLATIONS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on one split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--out", help="also write the CSV row here")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--config", help="model config for the composite checks (default: toy model)")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--module", action="append", help=f"restrict to {', '.join(gradcheck.MODULES)}")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="time the scan and the forward pass across lengths")
    b.add_argument("--lengths", default=",".join(map(str, bench.DEFAULT_LENGTHS)))
    b.add_argument("--repeat", type=int, default=5)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="parameter and FLOP accounting for a config")
    r.add_argument("--config")
    r.add_argument("--ablation", action="append", choices=ABLATIONS)
    r.add_argument("--T", dest="seq_len", type=int)
    r.add_argument("--C", dest="n_channels", type=int)
    r.add_argument("--K", dest="n_classes", type=int)
    r.add_argument("--batch", type=int, default=1)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckFailed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
