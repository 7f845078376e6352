"""Command-line entry point: ``vitoklab train|eval|reconstruct|sweep|report``.

Run configs are TOML files with optional top-level ``seed``, ``deterministic``
and ``out_dir`` keys and ``[model]``, ``[train]``, ``[corpus]``, ``[loss]``
tables. Command-line flags override values from the file.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Corpus, PPMError, read_ppm, write_ppm
from .evaluate import METRICS, reconstruct_array, score
from .losses import LossWeights
from .model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model.config import ConfigError, ModelConfig
from .model.vitok import init_params
from .training import (
    CsvLog,
    TrainingDiverged,
    TrainPlan,
    load_train_state,
    save_train_state,
    train_stage1,
    train_stage2,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

CHECKPOINT = "checkpoint.vtok"
SIDECAR = "optim.vtok"
EMA_CHECKPOINT = "checkpoint_ema.vtok"
TRAIN_LOG = "train_log.csv"

STAGE2_DEFAULTS = {"disc_lr": 2e-5, "disc_warmup_steps": 25_000, "ema_decay": 0.9999}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    train: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    seed: int = 0
    deterministic: bool = False
    out_dir: str = "run"
    has_model: bool = True

    def plan(self, stage: int) -> TrainPlan:
        kw = dict(self.train)
        if stage == 2:
            for k, v in STAGE2_DEFAULTS.items():
                kw.setdefault(k, v)
        return TrainPlan(**kw)

    def weights(self, stage: int) -> LossWeights:
        kw = dict(self.loss)
        if stage == 1:
            kw["lam"] = 0.0
        else:
            kw.setdefault("lam", 1.0)
        return LossWeights(**kw)

    def corpus_for(self, cfg: ModelConfig) -> Corpus:
        kw = {"T": cfg.T, "H": cfg.H, "W": cfg.W, **self.corpus}
        if "seed" not in self.corpus:
            kw["seed"] = self.seed
        return Corpus(**kw)


def _check_keys(section: str, got: dict, cls) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(got) - known
    if bad:
        raise UsageError(f"unknown keys in [{section}]: {sorted(bad)}")


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    bad = set(raw) - {"model", "train", "corpus", "loss", "seed", "deterministic", "out_dir"}
    if bad:
        raise UsageError(f"unknown config keys: {sorted(bad)}")
    _check_keys("train", raw.get("train", {}), TrainPlan)
    _check_keys("corpus", raw.get("corpus", {}), Corpus)
    _check_keys("loss", raw.get("loss", {}), LossWeights)
    try:
        model = ModelConfig.from_dict(raw.get("model", {}))
        # validate plan/weights eagerly so bad values fail before any work
        TrainPlan(**raw.get("train", {}))
        LossWeights(**{**raw.get("loss", {}), "lam": 0.0})
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return RunConfig(
        model=model,
        train=raw.get("train", {}),
        corpus=raw.get("corpus", {}),
        loss=raw.get("loss", {}),
        seed=int(raw.get("seed", 0)),
        deterministic=bool(raw.get("deterministic", False)),
        out_dir=str(raw.get("out_dir", "run")),
        has_model="model" in raw,
    )


@contextlib.contextmanager
def thread_limit(deterministic: bool):
    """Cap BLAS threads at VITOKLAB_THREADS (1 under --deterministic unless set)."""
    env = os.environ.get("VITOKLAB_THREADS")
    limit = int(env) if env else (1 if deterministic else None)
    if limit is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=limit):
        yield


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if args.deterministic:
        rc.deterministic = True
    if args.total_steps is not None:
        rc.train = {**rc.train, "total_steps": args.total_steps}
    out = Path(args.out or rc.out_dir)
    stage = args.stage
    plan = rc.plan(stage)
    weights = rc.weights(stage)

    if args.resume:
        if not (out / CHECKPOINT).exists() or not (out / SIDECAR).exists():
            raise UsageError(f"--resume needs {out / CHECKPOINT} and {out / SIDECAR}")
        cfg, params, _ = load_checkpoint(out / CHECKPOINT)
        state = load_train_state(params, out / SIDECAR)
        if state.stage != stage:
            raise UsageError(f"checkpoint in {out} is stage {state.stage}, not {stage}")
    elif stage == 2:
        if not args.init_from:
            raise UsageError("stage 2 requires --init-from <stage-1 checkpoint>")
        cfg, params, meta = load_checkpoint(args.init_from)
        if meta.get("stage", 1) != 1:
            raise UsageError(f"--init-from {args.init_from} is not a stage-1 checkpoint")
        if rc.has_model and rc.model != cfg:
            raise UsageError("config [model] does not match the --init-from checkpoint")
        state = None
    else:
        cfg = rc.model
        try:
            params = init_params(cfg, seed=rc.seed)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        state = None

    try:
        data = rc.corpus_for(cfg).load()
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(f"corpus: {exc}") from None
    if data.shape[1:4] != (cfg.T, cfg.H, cfg.W):
        raise UsageError(f"corpus items are {data.shape[1:4]}, model expects {(cfg.T, cfg.H, cfg.W)}")
    if plan.batch_size > len(data):
        raise UsageError(f"batch_size {plan.batch_size} exceeds corpus size {len(data)}")

    out.mkdir(parents=True, exist_ok=True)
    log = CsvLog(out / TRAIN_LOG, deterministic=rc.deterministic)
    kwargs = dict(weights=weights, seed=rc.seed, state=state, stop_at=args.stop_at, on_step=log)
    try:
        if stage == 1:
            state = train_stage1(cfg, params, data, plan, **kwargs)
        else:
            state = train_stage2(cfg, params if state is None else None, data, plan, **kwargs)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_train_state(state, cfg, out / CHECKPOINT, out / SIDECAR)
    if state.ema is not None:
        ema_params = state.params.clone()
        for k, t in state.ema.items():
            ema_params[k].data = t.data.copy()
        save_checkpoint(out / EMA_CHECKPOINT, cfg, ema_params, {"stage": state.stage, "step": state.step, "ema": True})
    print(f"stage {stage}: step {state.step}/{plan.total_steps}; wrote {out / CHECKPOINT}")
    return EXIT_OK


# ----------------------------------------------------------------- eval


def _eval_corpus(args, cfg: ModelConfig) -> np.ndarray:
    if args.corpus_dir:
        corpus = Corpus(kind="file-dir", path=args.corpus_dir, T=cfg.T, H=cfg.H, W=cfg.W)
    else:
        corpus = Corpus(kind=args.kind, n=args.n, seed=args.corpus_seed, T=cfg.T, H=cfg.H, W=cfg.W)
    try:
        data = corpus.load()
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(f"corpus: {exc}") from None
    if data.shape[1:4] != (cfg.T, cfg.H, cfg.W):
        raise UsageError(f"corpus items are {data.shape[1:4]} but the checkpoint expects {(cfg.T, cfg.H, cfg.W)}")
    if len(data) == 0:
        raise UsageError("corpus is empty")
    return data


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(METRICS)
    if unknown or not metrics:
        raise UsageError(f"--metrics must list some of {','.join(METRICS)}")
    cfg, params, _ = load_checkpoint(args.checkpoint)
    data = _eval_corpus(args, cfg)
    with np.errstate(all="raise"):
        try:
            recon = reconstruct_array(cfg, params, data, quantize=args.quantize, l_eval=args.l_eval)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        except FloatingPointError as exc:
            print(f"error: numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    rows, agg = score(recon, data, metrics)
    fields = ["item"] + metrics
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows + [agg]:
            w.writerow(["" if r.get(k) is None else (repr(float(r[k])) if k != "item" else r[k]) for k in fields])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# ----------------------------------------------------------- reconstruct


def cmd_reconstruct(args) -> int:
    cfg, params, _ = load_checkpoint(args.checkpoint)
    if cfg.T != 1:
        raise UsageError("reconstruct handles image checkpoints (T=1) only")
    try:
        imgs = [read_ppm(p) for p in args.inputs]
    except PPMError as exc:
        raise UsageError(str(exc)) from None
    for p, im in zip(args.inputs, imgs):
        if im.shape != (cfg.H, cfg.W, 3):
            raise UsageError(f"{p} is {im.shape[1]}x{im.shape[0]}, checkpoint expects {cfg.W}x{cfg.H}")
    recon = reconstruct_array(cfg, params, np.stack(imgs)[:, None], quantize=args.quantize)[:, 0]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for p, im, rec in zip(args.inputs, imgs, recon):
        stem = Path(p).stem
        rec = np.clip(rec, -1.0, 1.0)
        write_ppm(outdir / f"{stem}_recon.ppm", rec)
        write_ppm(outdir / f"{stem}_side.ppm", np.concatenate([im, rec], axis=1))
        print(outdir / f"{stem}_recon.ppm")
    return EXIT_OK


# ---------------------------------------------------------- sweep/report


def cmd_sweep(args) -> int:
    from .sweep import SweepError, emit_report, load_sweep_spec, run_sweep

    try:
        spec = load_sweep_spec(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
        if args.deterministic:
            spec.deterministic = True
        cells = spec.cells()
    except (SweepError, OSError, TypeError, ValueError) as exc:
        raise UsageError(f"sweep spec: {exc}") from None
    if args.dry_run:
        from .sweep import cell_config, cell_id

        for c in cells:
            cfg = cell_config(spec, c)
            print(f"{cell_id(c)}\tL={cfg.L}\tE={cfg.E}")
        return EXIT_OK
    out = Path(args.out or f"sweep_{spec.name}")
    workers = args.workers
    env = os.environ.get("VITOKLAB_THREADS")
    if env:
        workers = max(1, min(workers, int(env)))
    records = run_sweep(spec, out, workers=workers)
    emit_report(records, None, out)
    failed = sum(r["status"] != "ok" for r in records)
    print(f"wrote {out / 'records.csv'} ({len(records)} records, {failed} failed)")
    return EXIT_OK


def cmd_report(args) -> int:
    from .sweep import SweepError, emit_report, load_records

    try:
        records = load_records(args.records)
        paths = emit_report(records, None, args.out or args.records)
    except (SweepError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitoklab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--deterministic", action="store_true", help="single BLAS thread, zero wall-clock fields")

    p = sub.add_parser("train", help="run stage-1 or stage-2 training")
    p.add_argument("config", help="TOML run config")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--init-from", default=None, help="stage-1 checkpoint (required for stage 2)")
    p.add_argument("--resume", action="store_true", help="continue from checkpoint + sidecar in the output dir")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p.add_argument("--total-steps", type=int, default=None, help="override train.total_steps")
    p.add_argument("--stop-at", type=int, default=None, help="stop after this global step (resume later)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score reconstructions of a corpus")
    p.add_argument("checkpoint")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--corpus-dir", default=None, help="directory of PPM images or clip_<k>/ folders")
    g.add_argument("--kind", default="synthetic-textures", help="synthetic corpus kind")
    p.add_argument("--n", type=int, default=64, help="synthetic corpus size")
    p.add_argument("--corpus-seed", type=int, default=1000)
    p.add_argument("--metrics", default=",".join(METRICS), help="comma list of psnr,ssim,frechet_proxy")
    p.add_argument("--quantize", choices=("full", "truncated-half"), default="full")
    p.add_argument("--l-eval", type=int, default=None, help="code length for masked-variant checkpoints")
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="write reconstructions of PPM images")
    p.add_argument("checkpoint")
    p.add_argument("inputs", nargs="+", help="input .ppm files")
    p.add_argument("--outdir", required=True)
    p.add_argument("--quantize", choices=("full", "truncated-half"), default="full")
    common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sweep", help="run a config-grid sweep and write its report")
    p.add_argument("spec", help="TOML sweep spec")
    p.add_argument("--out", default=None)
    p.add_argument("--dry-run", action="store_true", help="list the grid without training")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-emit CSV/SVG reports from a sweep directory")
    p.add_argument("records", help="sweep directory (or records.jsonl)")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with thread_limit(getattr(args, "deterministic", False)):
            return args.func(args)
    except (UsageError, ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
