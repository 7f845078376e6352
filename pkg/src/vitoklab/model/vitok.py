"""ViT auto-encoder: tubelet embedding, Llama-style blocks and a Gaussian bottleneck."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from ..numerics import F, Tensor, get_dtype
from .config import ModelConfig, mlp_hidden
from .rope import RopeTables, grid_positions

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0
INIT_STD = 0.02


class ParamStore(dict):
    """Ordered map of parameter path -> Tensor."""

    def numel(self) -> int:
        return sum(t.size for t in self.values())

    def encoder_paths(self) -> list[str]:
        return [k for k in self if k.startswith("encoder.")]

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def clone(self) -> "ParamStore":
        return ParamStore((k, Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k)) for k, t in self.items())

    def digest(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for k, t in self.items():
            if k.startswith(prefix):
                h.update(k.encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def set_trainable(self, flag: bool, prefix: str = "") -> None:
        for k, t in self.items():
            if k.startswith(prefix):
                t.requires_grad = flag


@dataclass
class LatentCode:
    mean: Tensor
    logvar: Tensor
    z: Tensor


# ------------------------------------------------------------------ init


def _trunc_normal(rng: np.random.Generator, shape, std=INIT_STD) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return out * std


def sincos_table(n: int, width: int) -> np.ndarray:
    """1D sinusoidal table (n, width): sin on even dims, cos on odd dims."""
    pos = np.arange(n)[:, None]
    freq = 10000.0 ** (-np.arange(0, width, 2) / width)
    table = np.zeros((n, width))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)[:, : width // 2]
    return table


def _block_shapes(prefix: str, width: int) -> list[tuple[str, tuple, str]]:
    hid = mlp_hidden(width)
    return [
        (f"{prefix}.attn_norm.weight", (width,), "ones"),
        (f"{prefix}.attn.wq", (width, width), "normal"),
        (f"{prefix}.attn.wk", (width, width), "normal"),
        (f"{prefix}.attn.wv", (width, width), "normal"),
        (f"{prefix}.attn.wo", (width, width), "zeros"),
        (f"{prefix}.mlp_norm.weight", (width,), "ones"),
        (f"{prefix}.mlp.w1", (width, hid), "normal"),
        (f"{prefix}.mlp.w2", (width, hid), "normal"),
        (f"{prefix}.mlp.w3", (hid, width), "zeros"),
    ]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple, str]]:
    enc_w, enc_n, _ = cfg.dims("encoder")
    dec_w, dec_n, _ = cfg.dims("decoder")
    out = [("encoder.embed.weight", (cfg.patch_dim, enc_w), "normal"), ("encoder.embed.bias", (enc_w,), "zeros")]
    if cfg.variant == "latent":
        out.append(("encoder.latent_tokens", (cfg.latent_tokens, enc_w), "sincos"))
    for i in range(enc_n):
        out += _block_shapes(f"encoder.blocks.{i}", enc_w)
    out += [("encoder.to_latent.weight", (enc_w, 2 * cfg.c), "normal"), ("encoder.to_latent.bias", (2 * cfg.c,), "zeros")]
    if cfg.variant == "masked":
        out.append(("bottleneck.mask_token", (cfg.c,), "normal"))
    out += [("decoder.from_latent.weight", (cfg.c, dec_w), "normal"), ("decoder.from_latent.bias", (dec_w,), "zeros")]
    if cfg.variant == "latent":
        out.append(("decoder.mask_token", (dec_w,), "normal"))
    for i in range(dec_n):
        out += _block_shapes(f"decoder.blocks.{i}", dec_w)
    out += [("decoder.unembed.weight", (dec_w, cfg.patch_dim), "normal"), ("decoder.unembed.bias", (cfg.patch_dim,), "zeros")]
    return out


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    cfg.check_buildable()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape, kind in param_shapes(cfg):
        if kind == "normal":
            arr = _trunc_normal(rng, shape)
        elif kind == "zeros":
            arr = np.zeros(shape)
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = sincos_table(*shape)
        store[name] = Tensor(arr, requires_grad=True, name=name)
    return store


# ------------------------------------------------------------ tokenizing


def tubelet_embed(X, cfg: ModelConfig, params: ParamStore | None = None) -> Tensor:
    """(B, T, H, W, 3) -> (B, L, C_f); without params, returns raw flattened tubelets."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.ndim != 5 or X.shape[-1] != 3:
        raise ValueError(f"expected (B, T, H, W, 3), got {X.shape}")
    B, T, H, W, _ = X.shape
    q, p = cfg.q, cfg.p
    if T % q or H % p or W % p:
        raise ValueError(f"input {T}x{H}x{W} not divisible by tubelet {q}x{p}x{p}")
    x = X.reshape(B, T // q, q, H // p, p, W // p, p, 3)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    x = x.reshape(B, (T // q) * (H // p) * (W // p), q * p * p * 3)
    if params is None:
        return x
    return x @ params["encoder.embed.weight"] + params["encoder.embed.bias"]


def tubelet_unembed(tokens: Tensor, cfg: ModelConfig, params: ParamStore | None = None) -> Tensor:
    """Inverse of tubelet_embed: (B, L, C_g) -> (B, T, H, W, 3)."""
    if params is not None:
        tokens = tokens @ params["decoder.unembed.weight"] + params["decoder.unembed.bias"]
    B = tokens.shape[0]
    t, h, w = cfg.grid
    x = tokens.reshape(B, t, h, w, cfg.q, cfg.p, cfg.p, 3)
    x = x.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(B, cfg.T, cfg.H, cfg.W, 3)


# ---------------------------------------------------------------- blocks


def attention(x: Tensor, params: ParamStore, prefix: str, heads: int, rope: RopeTables) -> Tensor:
    B, L, C = x.shape
    d = C // heads

    def split(t):
        return t.reshape(B, L, heads, d).transpose(0, 2, 1, 3)

    q = rope.apply(split(x @ params[f"{prefix}.wq"]))
    k = rope.apply(split(x @ params[f"{prefix}.wk"]))
    v = split(x @ params[f"{prefix}.wv"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    attn = F.stable_softmax(scores, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, C)
    return out @ params[f"{prefix}.wo"]


def swiglu(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    gate = F.silu(x @ params[f"{prefix}.w1"])
    return (gate * (x @ params[f"{prefix}.w2"])) @ params[f"{prefix}.w3"]


def transformer_block(x: Tensor, params: ParamStore, prefix: str, heads: int, rope: RopeTables) -> Tensor:
    width = params[f"{prefix}.attn_norm.weight"].shape[0]
    if x.shape[-1] != width:
        raise ValueError(f"token width {x.shape[-1]} != block width {width}")
    x = x + attention(F.rms_norm(x, params[f"{prefix}.attn_norm.weight"]), params, f"{prefix}.attn", heads, rope)
    x = x + swiglu(F.rms_norm(x, params[f"{prefix}.mlp_norm.weight"]), params, f"{prefix}.mlp")
    return x


def run_blocks(x: Tensor, params: ParamStore, side: str, cfg: ModelConfig, positions: np.ndarray) -> Tensor:
    width, n_blocks, heads = cfg.dims(side)
    rope = RopeTables(positions, width // heads)
    for i in range(n_blocks):
        x = transformer_block(x, params, f"{side}.blocks.{i}", heads, rope)
    return x


def _batch_broadcast(t: Tensor, B: int) -> Tensor:
    return t.reshape((1,) + t.shape) + Tensor(np.zeros((B,) + (1,) * t.ndim))


# ------------------------------------------------------- encode / decode


def encode(X, cfg: ModelConfig, params: ParamStore, noise=None) -> LatentCode:
    """Encode pixels to a Gaussian code. ``noise=None`` means zero noise (z == mean)."""
    tokens = tubelet_embed(X, cfg, params)
    B = tokens.shape[0]
    positions = grid_positions(cfg.grid)
    if cfg.variant == "latent":
        lat = _batch_broadcast(params["encoder.latent_tokens"], B)
        tokens = F.concat([lat, tokens], axis=1)
        positions = np.concatenate([np.zeros((cfg.latent_tokens, 3), dtype=int), positions])
    h = run_blocks(tokens, params, "encoder", cfg, positions)
    if cfg.variant == "latent":
        h = h[:, : cfg.latent_tokens]
    stats = h @ params["encoder.to_latent.weight"] + params["encoder.to_latent.bias"]
    mean = stats[..., : cfg.c]
    logvar = F.clip(stats[..., cfg.c :], LOGVAR_MIN, LOGVAR_MAX)
    if noise is None:
        z = mean
    else:
        noise = noise if isinstance(noise, Tensor) else Tensor(noise)
        if noise.shape != mean.shape:
            raise ValueError(f"noise shape {noise.shape} != latent shape {mean.shape}")
        z = mean + F.exp(logvar * 0.5) * noise
    return LatentCode(mean, logvar, z)


def decode(z, cfg: ModelConfig, params: ParamStore) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.ndim != 3 or z.shape[-1] != cfg.c or z.shape[1] != cfg.code_tokens:
        raise ValueError(f"latent shape {z.shape} does not match (B, {cfg.code_tokens}, {cfg.c})")
    B = z.shape[0]
    h = z @ params["decoder.from_latent.weight"] + params["decoder.from_latent.bias"]
    positions = grid_positions(cfg.grid)
    if cfg.variant == "latent":
        dec_w = cfg.dims("decoder")[0]
        h = h + Tensor(sincos_table(cfg.latent_tokens, dec_w))
        masks = _batch_broadcast(params["decoder.mask_token"], B).reshape(B, 1, dec_w) + Tensor(np.zeros((1, cfg.L, 1)))
        h = F.concat([masks, h], axis=1)
        positions = np.concatenate([positions, np.zeros((cfg.latent_tokens, 3), dtype=int)])
    h = run_blocks(h, params, "decoder", cfg, positions)
    if cfg.variant == "latent":
        h = h[:, : cfg.L]
    return tubelet_unembed(h, cfg, params)


def is_power_of_two(n: int) -> bool:
    return n > 0 and not n & (n - 1)


def token_lengths(cfg: ModelConfig) -> list[int]:
    """Powers of two from min_tokens up to L (masked variant)."""
    out, n = [], cfg.min_tokens
    while n <= cfg.L:
        out.append(n)
        n *= 2
    return out


def mask_tail(z: Tensor, l_eval: int, mask_token: Tensor, cfg: ModelConfig) -> Tensor:
    """Replace code tokens at positions >= l_eval with the learned mask token."""
    if cfg.variant != "masked":
        raise ValueError("mask_tail applies to the masked variant only")
    if not is_power_of_two(l_eval) or not cfg.min_tokens <= l_eval <= z.shape[1]:
        raise ValueError(f"l_eval must be a power of two in [{cfg.min_tokens}, {z.shape[1]}], got {l_eval}")
    if l_eval == z.shape[1]:
        return z
    keep = np.zeros((z.shape[1], 1))
    keep[:l_eval] = 1.0
    return z * Tensor(keep) + mask_token * Tensor(1.0 - keep)


def reconstruct(X, cfg: ModelConfig, params: ParamStore, noise=None, l_eval: int | None = None,
                quantize: str = "full") -> tuple[Tensor, LatentCode]:
    code = encode(X, cfg, params, noise)
    z = code.z
    if quantize != "full":
        z = quantize_latent(z, quantize)
    if cfg.variant == "masked" and l_eval is not None:
        z = mask_tail(z, l_eval, params["bottleneck.mask_token"], cfg)
    return decode(z, cfg, params), code


# ------------------------------------------------------------- precision


def quantize_latent(z, mode: str = "full") -> Tensor:
    """``truncated-half`` rounds to an 8-bit significand (round-to-nearest-even)."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    if mode == "full":
        return z
    if mode != "truncated-half":
        raise ValueError(f"unknown quantize mode {mode!r}")
    bits = np.ascontiguousarray(z.data, dtype=np.float32).view(np.uint32).astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) & 0xFFFF0000
    return Tensor(rounded.astype(np.uint32).view(np.float32).astype(get_dtype()))


def identity_params(cfg: ModelConfig) -> ParamStore:
    """Weights under which reconstruct() returns its input exactly.

    Needs patch_dim == encoder width == decoder width == c. Blocks are
    identities because their residual output projections are zero.
    """
    width = cfg.dims("encoder")[0]
    if not (cfg.patch_dim == width == cfg.dims("decoder")[0] == cfg.c) or cfg.variant != "simple":
        raise ValueError("identity model needs a simple variant with patch_dim == width == c")
    store = init_params(cfg, seed=0)
    eye = np.eye(width)
    store["encoder.embed.weight"].data = eye.astype(get_dtype())
    to_latent = np.zeros((width, 2 * cfg.c))
    to_latent[:, : cfg.c] = eye
    store["encoder.to_latent.weight"].data = to_latent.astype(get_dtype())
    bias = np.zeros(2 * cfg.c)
    bias[cfg.c :] = LOGVAR_MIN
    store["encoder.to_latent.bias"].data = bias.astype(get_dtype())
    store["decoder.from_latent.weight"].data = eye.astype(get_dtype())
    store["decoder.unembed.weight"].data = eye.astype(get_dtype())
    return store
