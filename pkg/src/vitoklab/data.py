"""Seeded synthetic corpora, PPM (P6) I/O and deterministic batching.

Pixels are float32 in [-1, 1]. Image sets are (n, H, W, 3); video sets and
corpus arrays are (n, T, H, W, 3).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

CORPUS_KINDS = ("synthetic-textures", "synthetic-shapes", "synthetic-gradients", "synthetic-video", "file-dir")
IMAGE_KINDS = ("textures", "shapes", "gradients")


class PPMError(ValueError):
    pass


# ----------------------------------------------------------- generators


def _power_law_field(rng: np.random.Generator, H: int, W: int, alpha: float) -> np.ndarray:
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    amp = f ** (-alpha)
    amp[0, 0] = 0.0
    spec = (rng.standard_normal((H, W)) + 1j * rng.standard_normal((H, W))) * amp
    field = np.fft.ifft2(spec).real
    return field / (field.std() + 1e-12)


def _texture(rng, H, W) -> np.ndarray:
    alpha = rng.uniform(0.8, 1.6)
    base = _power_law_field(rng, H, W, alpha)
    img = np.stack([base + 0.6 * _power_law_field(rng, H, W, alpha) for _ in range(3)], axis=-1)
    img = img / (np.abs(img).max() + 1e-12)
    return img * rng.uniform(0.7, 1.0)


def _gradient(rng, H, W) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    ramp = ramp / (np.abs(ramp).max() + 1e-12)
    lo, hi = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    return (lo + (hi - lo) * (ramp[..., None] + 1) / 2).clip(-1, 1)


def _coverage_disc(H, W, cy, cx, r, ss=4) -> np.ndarray:
    """Anti-aliased disc coverage by ss x ss supersampling."""
    off = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(H)[:, None] + off[None, :]).reshape(-1)
    xs = (np.arange(W)[:, None] + off[None, :]).reshape(-1)
    inside = ((ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2) <= r * r
    return inside.reshape(H, ss, W, ss).mean(axis=(1, 3))


def _coverage_rect(H, W, y0, x0, y1, x1, ss=4) -> np.ndarray:
    off = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(H)[:, None] + off[None, :]).reshape(-1)
    xs = (np.arange(W)[:, None] + off[None, :]).reshape(-1)
    inside = ((ys >= y0) & (ys < y1))[:, None] & ((xs >= x0) & (xs < x1))[None, :]
    return inside.reshape(H, ss, W, ss).mean(axis=(1, 3))


def _shapes(rng, H, W) -> np.ndarray:
    img = np.broadcast_to(rng.uniform(-1, 1, 3), (H, W, 3)).copy()
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(-1, 1, 3)
        if rng.random() < 0.5:
            cov = _coverage_disc(H, W, rng.uniform(0, H), rng.uniform(0, W), rng.uniform(0.1, 0.35) * min(H, W))
        else:
            y0, x0 = rng.uniform(0, H * 0.7), rng.uniform(0, W * 0.7)
            cov = _coverage_rect(H, W, y0, x0, y0 + rng.uniform(0.2, 0.5) * H, x0 + rng.uniform(0.2, 0.5) * W)
        img = img * (1 - cov[..., None]) + color * cov[..., None]
    return img


_GENERATORS = {"textures": _texture, "gradients": _gradient, "shapes": _shapes}


def synth_images(kind: str, n: int, H: int, W: int, seed: int) -> np.ndarray:
    """n procedurally generated images; a pure function of its arguments."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown image kind {kind!r}; expected one of {IMAGE_KINDS}")
    if min(n, H, W) <= 0:
        raise ValueError("n, H and W must be positive")
    gen = _GENERATORS[kind]
    out = np.empty((n, H, W, 3), dtype=np.float32)
    for i in range(n):
        out[i] = gen(np.random.default_rng([seed, i]), H, W)
    return out.clip(-1, 1)


def synth_video(n: int, T: int, H: int, W: int, seed: int, motion: str = "static",
                velocity: tuple[float, float] | None = None) -> np.ndarray:
    """Clips of a sprite over a textured background.

    ``static`` repeats frame 0; ``drift`` moves the sprite by ``velocity``
    pixels per frame (random per clip when not given).
    """
    if T < 1 or min(n, H, W) <= 0:
        raise ValueError("n, T, H, W must be positive")
    if motion not in ("static", "drift"):
        raise ValueError(f"motion must be static or drift, got {motion!r}")
    out = np.empty((n, T, H, W, 3), dtype=np.float32)
    for i in range(n):
        rng = np.random.default_rng([seed, i, 7])
        bg = _texture(rng, H, W) * 0.6
        color = rng.uniform(-1, 1, 3)
        cy, cx = rng.uniform(0.25, 0.75) * H, rng.uniform(0.25, 0.75) * W
        r = rng.uniform(0.15, 0.25) * min(H, W)
        if motion == "static":
            vy = vx = 0.0
        elif velocity is not None:
            vy, vx = velocity
        else:
            vy, vx = rng.uniform(-1, 1, 2)
        for t in range(T):
            cov = _coverage_disc(H, W, cy + vy * t, cx + vx * t, r)[..., None]
            out[i, t] = bg * (1 - cov) + color * cov
    return out.clip(-1, 1)


# ------------------------------------------------------------------ PPM


def _read_ppm_bytes(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if not buf.startswith(b"P6"):
        raise PPMError(f"{name}: not a binary PPM (P6)")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise PPMError(f"{name}: unterminated comment")
            pos = end + 1
            continue
        m = re.match(rb"\d+", buf[pos:])
        if not m:
            raise PPMError(f"{name}: malformed header")
        fields.append(int(m.group()))
        pos += len(m.group())
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PPMError(f"{name}: malformed header")
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise PPMError(f"{name}: unsupported dims {w}x{h} or maxval {maxval}")
    need = w * h * 3
    if len(buf) - pos != need:
        raise PPMError(f"{name}: expected {need} pixel bytes, found {len(buf) - pos}")
    raw = np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w, 3)
    return (raw.astype(np.float32) / maxval * 2.0 - 1.0).astype(np.float32)


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    return _read_ppm_bytes(path.read_bytes(), str(path))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def ppm_bytes(img: np.ndarray) -> bytes:
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(img))


def load_images(directory) -> np.ndarray:
    """All *.ppm files of a directory, sorted by name: (n, H, W, 3)."""
    directory = Path(directory)
    files = sorted(directory.glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm files in {directory}")
    imgs = [read_ppm(f) for f in files]
    if len({im.shape for im in imgs}) != 1:
        raise PPMError(f"{directory}: images have differing sizes")
    return np.stack(imgs)


def load_videos(directory) -> np.ndarray:
    """``clip_<k>/frame_<t>.ppm`` layout -> (n, T, H, W, 3)."""
    directory = Path(directory)
    key = lambda p: int(re.findall(r"\d+", p.name)[-1])  # noqa: E731
    clips = sorted((d for d in directory.glob("clip_*") if d.is_dir()), key=key)
    if not clips:
        raise FileNotFoundError(f"no clip_<k> directories in {directory}")
    vids = [np.stack([read_ppm(f) for f in sorted(c.glob("frame_*.ppm"), key=key)]) for c in clips]
    if len({v.shape for v in vids}) != 1:
        raise PPMError(f"{directory}: clips have differing shapes")
    return np.stack(vids)


# --------------------------------------------------------------- corpus


@dataclass(frozen=True)
class Corpus:
    kind: str = "synthetic-textures"
    T: int = 1
    H: int = 16
    W: int = 16
    n: int = 64
    seed: int = 0
    motion: str = "static"
    path: str | None = None

    def __post_init__(self):
        if self.kind not in CORPUS_KINDS:
            raise ValueError(f"corpus kind must be one of {CORPUS_KINDS}, got {self.kind!r}")
        if self.kind == "file-dir" and not self.path:
            raise ValueError("file-dir corpus needs a path")

    def load(self) -> np.ndarray:
        if self.kind == "file-dir":
            path = Path(self.path)
            if any(path.glob("clip_*")):
                return load_videos(path)
            return load_images(path)[:, None]
        if self.kind == "synthetic-video":
            return synth_video(self.n, self.T, self.H, self.W, self.seed, self.motion)
        if self.T != 1:
            raise ValueError(f"{self.kind} is an image corpus; T must be 1")
        return synth_images(self.kind.split("-", 1)[1], self.n, self.H, self.W, self.seed)[:, None]


# ------------------------------------------------------------- batching


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(data: np.ndarray, batch_size: int, seed: int, epoch: int = 0) -> Iterator[np.ndarray]:
    """One epoch of seeded-shuffled full batches; the trailing partial batch is dropped."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    perm = epoch_permutation(len(data), seed, epoch)
    for k in range(len(data) // batch_size):
        yield data[perm[k * batch_size : (k + 1) * batch_size]]


def batch_for_step(data: np.ndarray, batch_size: int, seed: int, step: int) -> np.ndarray:
    """The batch a training run sees at ``step``; resumable without replaying."""
    per_epoch = len(data) // batch_size
    if per_epoch == 0:
        raise ValueError(f"batch_size {batch_size} exceeds corpus size {len(data)}")
    epoch, k = divmod(step, per_epoch)
    perm = epoch_permutation(len(data), seed, epoch)
    return data[perm[k * batch_size : (k + 1) * batch_size]]
