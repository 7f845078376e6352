"""Config-grid sweeps: one seeded Stage-1 run per cell, log-log fits and reports.

Sweep spec files are TOML::

    name = "e-sweep"
    seed = 0
    [axes]            # lists; any ModelConfig field, loss weight, or "seed"
    p = [4]
    c = [2, 4, 8, 16]
    [fixed]           # remaining ModelConfig fields
    H = 16
    W = 16
    encoder_size = "tiny"
    decoder_size = "tiny"
    [corpus]          # Corpus fields; T/H/W come from each cell
    kind = "synthetic-textures"
    n = 256
    [eval]
    n = 64
    seed = 1000
    [train]           # TrainPlan fields
    total_steps = 800
    [loss]            # LossWeights fields
    eta = 1.0
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data import Corpus
from .evaluate import evaluate
from .losses import LossWeights
from .model.config import ConfigError, ModelConfig, count_params
from .model.vitok import init_params
from .training import TrainingDiverged, TrainPlan, train_stage1

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
LOSS_FIELDS = {f.name for f in dataclasses.fields(LossWeights)}
PLAN_FIELDS = {f.name for f in dataclasses.fields(TrainPlan)}
CORPUS_FIELDS = {f.name for f in dataclasses.fields(Corpus)} - {"T", "H", "W"}
SECTIONS = {"name", "seed", "deterministic", "axes", "fixed", "corpus", "eval", "train", "loss"}

RECORD_FIELDS = [
    "config_id", "status", "seed", "q", "p", "c", "T", "H", "W", "encoder_size", "decoder_size", "variant",
    "beta", "eta", "lam", "L", "E", "pixels_per_channel", "params_encoder", "params_decoder", "steps",
    "psnr", "ssim", "frechet_proxy", "rec", "kl", "perceptual", "gan_g", "total", "wall_ms",
]
FIT_FIELDS = ["x", "y", "transform", "n", "slope", "intercept", "pearson_r", "spearman_rho", "degenerate"]
REPORT_METRICS = ("psnr", "ssim", "frechet_proxy")


class SweepError(ValueError):
    pass


@dataclass
class SweepSpec:
    axes: dict[str, list]
    fixed: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=lambda: {"kind": "synthetic-textures", "n": 256})
    eval: dict = field(default_factory=lambda: {"n": 64, "seed": 1000})
    train: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    seed: int = 0
    name: str = "sweep"
    deterministic: bool = True

    def __post_init__(self):
        allowed = MODEL_FIELDS | LOSS_FIELDS | {"seed"}
        for k, v in self.axes.items():
            if k not in allowed:
                raise SweepError(f"unknown axis {k!r}")
            if not isinstance(v, list):
                raise SweepError(f"axis {k!r} must be a list")
        for k in self.fixed:
            if k not in MODEL_FIELDS:
                raise SweepError(f"unknown fixed model key {k!r}")
        for section, known in (("corpus", CORPUS_FIELDS), ("train", PLAN_FIELDS), ("loss", LOSS_FIELDS),
                               ("eval", {"n", "seed"})):
            bad = set(getattr(self, section)) - known
            if bad:
                raise SweepError(f"unknown keys in [{section}]: {sorted(bad)}")
        overlap = set(self.axes) & (set(self.fixed) | set(self.loss))
        if overlap:
            raise SweepError(f"keys both swept and fixed: {sorted(overlap)}")

    def cells(self) -> list[dict]:
        """Cross product of the axes, in axis-declaration order. Validates every config."""
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise SweepError("sweep grid is empty")
        keys = list(self.axes)
        cells = [dict(zip(keys, combo)) for combo in itertools.product(*(self.axes[k] for k in keys))]
        for cell in cells:
            try:
                cell_config(self, cell)
            except (ConfigError, TypeError) as exc:
                raise SweepError(f"cell {cell_id(cell)}: {exc}") from None
        return cells


def load_sweep_spec(path) -> SweepSpec:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    bad = set(raw) - SECTIONS
    if bad:
        raise SweepError(f"unknown top-level keys: {sorted(bad)}")
    return SweepSpec(**raw)


def cell_id(cell: dict) -> str:
    return "|".join(f"{k}={v}" for k, v in cell.items())


def cell_seed(spec: SweepSpec, cell: dict) -> int:
    base = cell.get("seed", spec.seed)
    digest = hashlib.sha256(f"{base}:{cell_id(cell)}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def cell_config(spec: SweepSpec, cell: dict) -> ModelConfig:
    kw = dict(spec.fixed)
    kw.update({k: v for k, v in cell.items() if k in MODEL_FIELDS})
    return ModelConfig(**kw)


def cell_weights(spec: SweepSpec, cell: dict) -> LossWeights:
    kw = dict(spec.loss)
    kw.update({k: v for k, v in cell.items() if k in LOSS_FIELDS})
    return LossWeights(**kw)


# ------------------------------------------------------------------ run


def run_cell(spec: SweepSpec, cell: dict) -> dict:
    cfg = cell_config(spec, cell)
    weights = cell_weights(spec, cell)
    plan = TrainPlan(**spec.train)
    seed = cell_seed(spec, cell)
    corpus_kw = dict(spec.corpus, T=cfg.T, H=cfg.H, W=cfg.W)
    data = Corpus(**corpus_kw).load()
    eval_kw = dict(corpus_kw, n=spec.eval.get("n", 64), seed=spec.eval.get("seed", corpus_kw.get("seed", 0) + 1000))
    eval_data = Corpus(**eval_kw).load()

    rec = {
        "config_id": cell_id(cell), "status": "ok", "seed": seed,
        "q": cfg.q, "p": cfg.p, "c": cfg.c, "T": cfg.T, "H": cfg.H, "W": cfg.W,
        "encoder_size": cfg.encoder_size, "decoder_size": cfg.decoder_size, "variant": cfg.variant,
        "beta": weights.beta, "eta": weights.eta, "lam": weights.lam,
        "L": cfg.L, "E": cfg.E, "pixels_per_channel": cfg.pixels_per_channel,
        "params_encoder": count_params(cfg, "encoder"), "params_decoder": count_params(cfg, "decoder"),
        "steps": plan.total_steps,
    }
    t0 = time.perf_counter()
    params = init_params(cfg, seed=seed)
    try:
        state = train_stage1(cfg, params, data, plan, weights=weights, seed=seed)
        rec.update(evaluate(cfg, params, eval_data))
        last = state.history[-1] if state.history else {}
        rec.update({k: last.get(k, float("nan")) for k in ("rec", "kl", "perceptual", "gan_g", "total")})
    except TrainingDiverged as exc:
        rec["status"] = f"failed: {exc}"[:200]
    rec["wall_ms"] = 0 if spec.deterministic else round((time.perf_counter() - t0) * 1e3, 1)
    # round-trip so fresh and resumed records carry identical plain types
    return json.loads(json.dumps(rec, sort_keys=True, default=float))


def _load_done(path: Path) -> dict[str, dict]:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                r = json.loads(line)
                done[r["config_id"]] = r
    return done


def run_sweep(spec: SweepSpec, out_dir, workers: int = 1, log=print) -> list[dict]:
    """Run every missing cell, appending to ``records.jsonl``; returns records in grid order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    journal = out / "records.jsonl"
    cells = spec.cells()
    done = _load_done(journal)
    todo = [c for c in cells if cell_id(c) not in done]
    log(f"{len(cells)} cells, {len(cells) - len(todo)} already done")

    def commit(rec):
        with journal.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        done[rec["config_id"]] = rec
        log(f"  {rec['config_id']}: {rec['status']} psnr={rec.get('psnr')}")

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, spec, c) for c in todo]
            for fut in as_completed(futures):
                commit(fut.result())
    else:
        for c in todo:
            commit(run_cell(spec, c))
    records = [done[cell_id(c)] for c in cells]
    # rewrite the journal in grid order so later reports do not depend on completion order
    tmp = journal.with_suffix(".tmp")
    tmp.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    tmp.replace(journal)
    return records


# ----------------------------------------------------------------- fits


@dataclass
class FitResult:
    x: str
    y: str
    transform: str
    n: int
    slope: float
    intercept: float
    pearson_r: float
    spearman_rho: float
    degenerate: bool

    def predict(self, x: np.ndarray) -> np.ndarray:
        yy = self.intercept + self.slope * np.log(x)
        return np.exp(yy) if self.transform == "log-log" else yy


def fit_loglog(records: list[dict], x: str = "E", y: str = "psnr", log_y: bool = False) -> FitResult:
    """Least squares of y (or log y) on log x, with Pearson and Spearman correlations."""
    rows = [r for r in records if r.get("status", "ok") == "ok"]
    if len(rows) < 3:
        raise SweepError(f"need at least 3 records to fit, got {len(rows)}")
    xs = np.array([float(r[x]) for r in rows])
    ys = np.array([float(r[y]) for r in rows])
    if (xs <= 0).any() or (log_y and (ys <= 0).any()):
        raise SweepError("log-transformed fields must be positive")
    lx = np.log(xs)
    ly = np.log(ys) if log_y else ys
    if np.ptp(lx) == 0:
        raise SweepError(f"{x} has zero variance")
    transform = "log-log" if log_y else "semi-log"
    if np.ptp(ly) == 0:
        return FitResult(x, y, transform, len(rows), 0.0, float(ly[0]), 0.0, 0.0, True)
    slope, intercept = np.polyfit(lx, ly, 1)
    r = float(np.corrcoef(lx, ly)[0, 1])
    rho = float(stats.spearmanr(lx, ly).statistic)
    return FitResult(x, y, transform, len(rows), float(slope), float(intercept), r, rho, False)


def default_fits(records: list[dict]) -> list[FitResult]:
    fits = []
    for y in REPORT_METRICS:
        for log_y in (False, True):
            try:
                fits.append(fit_loglog(records, "E", y, log_y))
            except SweepError:
                continue
    return fits


# --------------------------------------------------------------- report


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(float(v))
    return "" if v is None else str(v)


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in fields])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _svg_scatter(records: list[dict], y: str, fit: FitResult | None) -> str:
    pts = [(math.log(r["E"]), float(r[y])) for r in records if r.get("status") == "ok" and r.get(y) is not None]
    W, H, m = 480, 360, 50
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def sy(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{m}" y1="{H - m}" x2="{W - m}" y2="{H - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{H - m}" stroke="black"/>',
        f'<text x="{W / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="12">log E</text>',
        f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {H / 2:.1f})">{y}</text>',
        f'<text x="{m}" y="{H - m + 16}" font-size="10">{x0:.3f}</text>',
        f'<text x="{W - m}" y="{H - m + 16}" font-size="10" text-anchor="end">{x1:.3f}</text>',
        f'<text x="{m - 4}" y="{H - m}" font-size="10" text-anchor="end">{y0:.3f}</text>',
        f'<text x="{m - 4}" y="{m + 4}" font-size="10" text-anchor="end">{y1:.3f}</text>',
    ]
    for px, py in pts:
        out.append(f'<circle cx="{sx(px):.3f}" cy="{sy(py):.3f}" r="4" fill="steelblue"/>')
    if fit is not None and not fit.degenerate:
        la, lb = fit.intercept + fit.slope * x0, fit.intercept + fit.slope * x1
        out.append(f'<line x1="{sx(x0):.3f}" y1="{sy(la):.3f}" x2="{sx(x1):.3f}" y2="{sy(lb):.3f}" '
                   f'stroke="firebrick" stroke-dasharray="4 3"/>')
        out.append(f'<text x="{W - m}" y="{m - 10}" font-size="11" text-anchor="end">'
                   f'slope {fit.slope:.4f}, r {fit.pearson_r:.3f}, rho {fit.spearman_rho:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(records: list[dict], fits: list[FitResult] | None, path) -> list[Path]:
    """Write records.csv, fits.csv and one scatter SVG per metric into ``path``."""
    if not records:
        raise SweepError("no records to report")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    fits = default_fits(records) if fits is None else fits
    written = [out / "records.csv", out / "fits.csv"]
    _write_csv(written[0], RECORD_FIELDS, records)
    _write_csv(written[1], FIT_FIELDS, [dataclasses.asdict(f) for f in fits])
    for y in REPORT_METRICS:
        fit = next((f for f in fits if f.y == y and f.transform == "semi-log"), None)
        p = out / f"scatter_{y}_vs_logE.svg"
        p.write_text(_svg_scatter(records, y, fit), encoding="utf-8")
        written.append(p)
    return written


def load_records(path) -> list[dict]:
    """Records from a sweep directory's ``records.jsonl`` (journal order)."""
    path = Path(path)
    journal = path / "records.jsonl" if path.is_dir() else path
    if not journal.exists():
        raise FileNotFoundError(f"no records journal at {journal}")
    return list(_load_done(journal).values())
