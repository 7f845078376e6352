"""Model configuration, size table and parameter/FLOP algebra."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

# name -> (hidden_dim, blocks, heads)
SIZES: dict[str, tuple[int, int, int]] = {
    "S": (768, 6, 12),
    "B": (768, 12, 12),
    "L": (1152, 24, 16),
    # desk-scale sizes
    "tiny": (72, 2, 2),
    "tiny-deep": (72, 4, 2),
}

VARIANTS = ("simple", "latent", "masked")


class ConfigError(ValueError):
    pass


def mlp_hidden(width: int) -> int:
    """SwiGLU inner width: ceil(8/3 * width) rounded up to a multiple of 64."""
    return 64 * math.ceil(math.ceil(8 * width / 3) / 64)


@dataclass(frozen=True)
class ModelConfig:
    q: int = 1
    p: int = 16
    c: int = 16
    encoder_size: str = "S"
    decoder_size: str = "B"
    variant: str = "simple"
    latent_tokens: int | None = None
    min_tokens: int | None = None
    T: int = 1
    H: int = 256
    W: int = 256
    scale_override: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.scale_override is not None:
            object.__setattr__(self, "scale_override", tuple(int(v) for v in self.scale_override))
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        for name in ("q", "p", "c", "T", "H", "W"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive int, got {v!r}")
        if self.H % self.p or self.W % self.p:
            raise ConfigError(f"p={self.p} must divide H={self.H} and W={self.W}")
        if self.T % self.q:
            raise ConfigError(f"q={self.q} must divide T={self.T}")
        for side in ("encoder_size", "decoder_size"):
            if getattr(self, side) not in SIZES:
                raise ConfigError(f"{side} must be one of {sorted(SIZES)}, got {getattr(self, side)!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "latent":
            if not self.latent_tokens or self.latent_tokens <= 0:
                raise ConfigError("latent variant needs a positive latent_tokens")
        if self.variant == "masked":
            m = self.min_tokens
            if not m or m <= 0 or m & (m - 1) or m > self.L:
                raise ConfigError(f"masked variant needs min_tokens a power of two <= L={self.L}, got {m!r}")
        if self.scale_override is not None:
            if len(self.scale_override) != 3 or min(self.scale_override) <= 0:
                raise ConfigError("scale_override must be (hidden, blocks, heads), all positive")
        for side in ("encoder", "decoder"):
            hidden, _, heads = self.dims(side)
            if hidden % heads:
                raise ConfigError(f"{side} hidden {hidden} not divisible by heads {heads}")

    def check_buildable(self) -> None:
        """The axial RoPE split needs each head width to be a multiple of 6."""
        for side in ("encoder", "decoder"):
            hidden, _, heads = self.dims(side)
            if (hidden // heads) % 6:
                raise ConfigError(
                    f"{side} head width {hidden // heads} is not divisible by 6 for 3-axis RoPE"
                )

    # ------------------------------------------------------------------
    def dims(self, side: str) -> tuple[int, int, int]:
        if self.scale_override is not None:
            return self.scale_override
        return SIZES[self.encoder_size if side == "encoder" else self.decoder_size]

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.T // self.q, self.H // self.p, self.W // self.p

    @property
    def L(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def code_tokens(self) -> int:
        """Tokens in the latent code (l_latent for the latent variant, else L)."""
        return self.latent_tokens if self.variant == "latent" else self.L

    @property
    def E(self) -> int:
        return self.code_tokens * self.c

    def effective_E(self, l_eval: int | None = None) -> int:
        if self.variant == "masked" and l_eval is not None:
            return l_eval * self.c
        return self.E

    @property
    def patch_dim(self) -> int:
        return self.q * self.p * self.p * 3

    @property
    def pixels_per_channel(self) -> float:
        return self.T * self.H * self.W * 3 / self.E

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["scale_override"] is not None:
            d["scale_override"] = list(d["scale_override"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("scale_override") is not None:
            d["scale_override"] = tuple(d["scale_override"])
        return cls(**d)


def block_params(width: int) -> int:
    # q, k, v, o projections (no biases), SwiGLU w1/w2/w3, two RMSNorm gains
    return 4 * width * width + 3 * width * mlp_hidden(width) + 2 * width


def count_params(cfg: ModelConfig, part: str = "all") -> int:
    """Exact parameter count of the model ``init_params`` would build."""
    if part not in ("encoder", "decoder", "all"):
        raise ValueError(f"part must be encoder/decoder/all, got {part!r}")
    enc_w, enc_n, _ = cfg.dims("encoder")
    dec_w, dec_n, _ = cfg.dims("decoder")
    enc = cfg.patch_dim * enc_w + enc_w + enc_n * block_params(enc_w) + enc_w * 2 * cfg.c + 2 * cfg.c
    dec = cfg.c * dec_w + dec_w + dec_n * block_params(dec_w) + dec_w * cfg.patch_dim + cfg.patch_dim
    if cfg.variant == "latent":
        enc += cfg.latent_tokens * enc_w
        dec += dec_w
    if cfg.variant == "masked":
        dec += cfg.c
    return {"encoder": enc, "decoder": dec, "all": enc + dec}[part]


def _block_flops(width: int, heads: int, n: int) -> float:
    macs = 4 * n * width * width  # q, k, v, o
    macs += 2 * n * n * width  # scores and weighted sum, all heads together
    macs += 3 * n * width * mlp_hidden(width)
    return 2.0 * macs


def estimate_flops(cfg: ModelConfig, L: int | None = None, part: str = "all") -> float:
    """FLOPs for one input item: block matmuls only, 2 FLOPs per multiply-add."""
    if part not in ("encoder", "decoder", "all"):
        raise ValueError(f"part must be encoder/decoder/all, got {part!r}")
    n = cfg.L if L is None else L
    enc_n = n + (cfg.latent_tokens if cfg.variant == "latent" else 0)
    enc_w, enc_b, enc_h = cfg.dims("encoder")
    dec_w, dec_b, dec_h = cfg.dims("decoder")
    enc = enc_b * _block_flops(enc_w, enc_h, enc_n)
    dec = dec_b * _block_flops(dec_w, dec_h, enc_n)
    return {"encoder": enc, "decoder": dec, "all": enc + dec}[part]
