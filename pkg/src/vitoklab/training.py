"""Two-stage training: AdamW, warmup + cosine schedule, encoder freezing, discriminator and EMA."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import batch_for_step
from .losses import STAGE1_WEIGHTS, STAGE2_WEIGHTS, Discriminator, LossWeights, frames, total_loss
from .model.checkpoint import CheckpointError, read_tensors, save_checkpoint, write_tensors
from .model.config import ModelConfig
from .model.vitok import ParamStore, reconstruct, token_lengths
from .numerics import F, Tensor, backward

LOG_FIELDS = ["step", "lr", "rec", "kl", "perceptual", "gan_g", "total", "wall_ms"]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainPlan:
    total_steps: int = 100
    batch_size: int = 16
    peak_lr: float | None = None  # None: 1e-4 / 256 * batch_size * frames
    frames: int = 1
    weight_decay: float = 1e-4
    warmup_steps: int = 0
    schedule: str = "cosine"
    ema_decay: float | None = None
    disc_lr: float | None = None
    disc_warmup_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    full_finetune: bool = False

    def __post_init__(self):
        if self.total_steps < 0 or self.batch_size <= 0 or self.frames <= 0:
            raise ValueError("total_steps >= 0, batch_size > 0 and frames > 0 required")
        if self.weight_decay < 0 or self.warmup_steps < 0:
            raise ValueError("weight_decay and warmup_steps must be >= 0")
        if self.peak_lr is not None and self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"schedule must be cosine or constant, got {self.schedule!r}")
        if (self.disc_lr is None) != (self.disc_warmup_steps is None):
            raise ValueError("disc_lr and disc_warmup_steps go together")

    @property
    def peak(self) -> float:
        if self.peak_lr is not None:
            return self.peak_lr
        return 1e-4 / 256 * self.batch_size * self.frames

    def discriminator_plan(self) -> "TrainPlan":
        if self.disc_lr is None:
            raise ValueError("plan has no discriminator settings")
        return replace(self, peak_lr=self.disc_lr, warmup_steps=self.disc_warmup_steps,
                       schedule="constant", disc_lr=None, disc_warmup_steps=None)


def lr_at(step: int, plan: TrainPlan) -> float:
    """Linear warmup to the peak, then cosine to zero at total_steps (or flat)."""
    peak, warm = plan.peak, plan.warmup_steps
    if warm and step < warm:
        return peak * step / warm
    if plan.schedule == "constant":
        return peak
    span = max(plan.total_steps - warm, 1)
    progress = min(max(step - warm, 0) / span, 1.0)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def disc_lr_at(step: int, plan: TrainPlan) -> float:
    return lr_at(step, plan.discriminator_plan())


# ---------------------------------------------------------------- AdamW


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], opt: AdamState, lr: float,
               plan: TrainPlan = TrainPlan(), frozen: frozenset[str] | set[str] = frozenset(),
               weight_decay: float | None = None) -> None:
    """In-place AdamW update (bias-corrected, decoupled decay); frozen paths untouched."""
    wd = plan.weight_decay if weight_decay is None else weight_decay
    b1, b2 = plan.beta1, plan.beta2
    missing = [k for k in params if k not in frozen and k not in grads]
    if missing:
        raise KeyError(f"missing gradients for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    opt.t += 1
    c1 = 1.0 - b1**opt.t
    c2 = 1.0 - b2**opt.t
    for k, p in params.items():
        if k in frozen:
            continue
        g = grads[k]
        dt = p.data.dtype
        m = opt.m[k] = (b1 * opt.m[k] + (1 - b1) * g).astype(dt, copy=False)
        v = opt.v[k] = (b2 * opt.v[k] + (1 - b2) * g * g).astype(dt, copy=False)
        update = (m / c1) / (np.sqrt(v / c2) + plan.eps)
        p.data = (p.data * (1.0 - lr * wd) - lr * update).astype(dt, copy=False)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return norm


def ema_update(ema: ParamStore, params: ParamStore, decay: float, paths) -> None:
    for k in paths:
        e = ema[k].data
        ema[k].data = (e + (1.0 - decay) * (params[k].data - e)).astype(e.dtype, copy=False)


# ---------------------------------------------------------------- state


@dataclass
class TrainState:
    params: ParamStore
    opt: AdamState
    stage: int = 1
    step: int = 0
    seed: int = 0
    frozen: frozenset[str] = frozenset()
    ema: ParamStore | None = None
    disc: Discriminator | None = None
    disc_opt: AdamState | None = None
    history: list[dict] = field(default_factory=list)


class CsvLog:
    """Append-only training log."""

    def __init__(self, path, deterministic: bool = False):
        self.path = Path(path)
        self.deterministic = deterministic
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_FIELDS)

    def __call__(self, row: dict) -> None:
        if self.deterministic:
            row = dict(row, wall_ms=0)
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[k]) for k in LOG_FIELDS])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _noise_and_length(cfg: ModelConfig, batch: int, seed: int, step: int, dtype):
    rng = np.random.default_rng([seed, step, 1])
    noise = rng.standard_normal((batch, cfg.code_tokens, cfg.c)).astype(dtype)
    l_eval = int(rng.choice(token_lengths(cfg))) if cfg.variant == "masked" else None
    return noise, l_eval


def _check_finite(bd, step: int) -> None:
    vals = bd.as_dict()
    if not all(math.isfinite(v) for v in vals.values()):
        raise TrainingDiverged(f"non-finite loss at step {step}: {vals}")


def _guarded(step: int, loss_fn, *args, **kwargs):
    try:
        bd = loss_fn(*args, **kwargs)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"step {step}: {exc}") from exc
    _check_finite(bd, step)
    return bd


def _end_step(plan: TrainPlan, stop_at: int | None) -> int:
    return plan.total_steps if stop_at is None else min(stop_at, plan.total_steps)


def train_stage1(cfg: ModelConfig, params: ParamStore, data: np.ndarray, plan: TrainPlan,
                 weights: LossWeights = STAGE1_WEIGHTS, seed: int = 0, state: TrainState | None = None,
                 stop_at: int | None = None, on_step: Callable[[dict], None] | None = None) -> TrainState:
    """Reconstruction + KL + perceptual training of the whole auto-encoder; no EMA."""
    if state is None:
        state = TrainState(params=params, opt=AdamState.zeros_like(params), stage=1, seed=seed)
    if state.stage != 1:
        raise ValueError("state is not a stage-1 state")
    params = state.params
    params.set_trainable(True)
    leaves = list(params.values())
    for step in range(state.step, _end_step(plan, stop_at)):
        t0 = time.perf_counter()
        X = batch_for_step(data, plan.batch_size, state.seed, step)
        noise, l_eval = _noise_and_length(cfg, len(X), state.seed, step, X.dtype)
        X_hat, code = reconstruct(X, cfg, params, noise=noise, l_eval=l_eval)
        bd = _guarded(step, total_loss, X_hat, X, code, weights, stage=1)
        g = backward(bd.objective, leaves=leaves)
        grads = {k: g[p] for k, p in params.items()}
        clip_grads(grads, plan.grad_clip)
        lr = lr_at(step, plan)
        adamw_step(params, grads, state.opt, lr, plan)
        state.step = step + 1
        row = {"step": step, "lr": lr, **bd.as_dict(), "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)}
        state.history.append(row)
        if on_step:
            on_step(row)
    return state


def start_stage2(params: ParamStore, plan: TrainPlan, seed: int = 0) -> TrainState:
    """Stage-2 state from stage-1 weights: encoder frozen, EMA at current weights, fresh discriminator."""
    if plan.disc_lr is None:
        raise ValueError("stage 2 needs disc_lr and disc_warmup_steps in the plan")
    frozen = frozenset() if plan.full_finetune else frozenset(params.encoder_paths())
    disc = Discriminator(seed=seed + 1)
    return TrainState(
        params=params,
        opt=AdamState.zeros_like(params),
        stage=2,
        seed=seed,
        frozen=frozen,
        ema=params.clone() if plan.ema_decay else None,
        disc=disc,
        disc_opt=AdamState.zeros_like(disc.params),
    )


def train_stage2(cfg: ModelConfig, params: ParamStore | None, data: np.ndarray, plan: TrainPlan,
                 weights: LossWeights = STAGE2_WEIGHTS, seed: int = 0, state: TrainState | None = None,
                 stop_at: int | None = None, on_step: Callable[[dict], None] | None = None) -> TrainState:
    """Decoder fine-tuning against a discriminator, with the encoder frozen by default.

    The adversarial weight stays at zero until the discriminator warmup ends.
    """
    if state is None:
        if params is None:
            raise ValueError("stage 2 starts from stage-1 weights; none given")
        state = start_stage2(params, plan, seed)
    if state.stage != 2:
        raise ValueError("state is not a stage-2 state")
    params, disc = state.params, state.disc
    for k, p in params.items():
        p.requires_grad = k not in state.frozen
    trainable = [k for k in params if k not in state.frozen]
    disc_plan = plan.discriminator_plan()

    for step in range(state.step, _end_step(plan, stop_at)):
        t0 = time.perf_counter()
        X = batch_for_step(data, plan.batch_size, state.seed, step)
        noise, l_eval = _noise_and_length(cfg, len(X), state.seed, step, X.dtype)

        # generator (decoder) update; discriminator weights held constant
        disc.params.set_trainable(False)
        X_hat, code = reconstruct(X, cfg, params, noise=noise, l_eval=l_eval)
        gan_active = step >= plan.disc_warmup_steps
        bd = _guarded(step, total_loss, X_hat, X, code, weights, stage=2, discriminator=disc, gan_active=gan_active)
        g = backward(bd.objective, leaves=[params[k] for k in trainable])
        grads = {k: g[params[k]] for k in trainable}
        clip_grads(grads, plan.grad_clip)
        lr = lr_at(step, plan)
        adamw_step(params, grads, state.opt, lr, plan, frozen=state.frozen)
        if state.ema is not None:
            ema_update(state.ema, params, plan.ema_decay, trainable)

        # discriminator update on the pre-update reconstructions
        disc.params.set_trainable(True)
        fake = Tensor(X_hat.data)
        d_loss = F.mean(F.softplus(-disc(frames(X)))) + F.mean(F.softplus(disc(frames(fake))))
        dg = backward(d_loss, leaves=list(disc.params.values()))
        dgrads = {k: dg[p] for k, p in disc.params.items()}
        clip_grads(dgrads, plan.grad_clip)
        adamw_step(disc.params, dgrads, state.disc_opt, lr_at(step, disc_plan), plan)

        state.step = step + 1
        row = {"step": step, "lr": lr, **bd.as_dict(), "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)}
        state.history.append(row)
        if on_step:
            on_step(row)
    return state


# ---------------------------------------------------------- persistence


def save_train_state(state: TrainState, cfg: ModelConfig, checkpoint_path, sidecar_path) -> None:
    save_checkpoint(checkpoint_path, cfg, state.params, {"stage": state.stage, "step": state.step})
    tensors: dict[str, np.ndarray] = {}
    for k in state.params:
        tensors[f"m/{k}"] = state.opt.m[k]
        tensors[f"v/{k}"] = state.opt.v[k]
    if state.ema is not None:
        tensors.update({f"ema/{k}": t.data for k, t in state.ema.items()})
    if state.disc is not None:
        tensors.update({f"disc/{k}": t.data for k, t in state.disc.params.items()})
        tensors.update({f"disc_m/{k}": a for k, a in state.disc_opt.m.items()})
        tensors.update({f"disc_v/{k}": a for k, a in state.disc_opt.v.items()})
    header = {
        "kind": "optimizer",
        "stage": state.stage,
        "step": state.step,
        "seed": state.seed,
        "opt_t": state.opt.t,
        "disc_t": state.disc_opt.t if state.disc_opt else 0,
        "frozen": sorted(state.frozen),
    }
    write_tensors(sidecar_path, header, tensors)


def load_train_state(params: ParamStore, sidecar_path) -> TrainState:
    header, tensors = read_tensors(sidecar_path)
    if header.get("kind") != "optimizer":
        raise CheckpointError(f"{sidecar_path}: not an optimizer sidecar")
    opt = AdamState({k: tensors[f"m/{k}"] for k in params}, {k: tensors[f"v/{k}"] for k in params}, header["opt_t"])
    state = TrainState(params=params, opt=opt, stage=header["stage"], step=header["step"],
                       seed=header["seed"], frozen=frozenset(header["frozen"]))
    if any(k.startswith("ema/") for k in tensors):
        state.ema = ParamStore((k, Tensor(tensors[f"ema/{k}"], name=k)) for k in params)
    if any(k.startswith("disc/") for k in tensors):
        disc = Discriminator(seed=state.seed + 1)
        for k in disc.params:
            disc.params[k] = Tensor(tensors[f"disc/{k}"], requires_grad=True, name=k)
        state.disc = disc
        state.disc_opt = AdamState({k: tensors[f"disc_m/{k}"] for k in disc.params},
                                   {k: tensors[f"disc_v/{k}"] for k in disc.params}, header["disc_t"])
    return state
