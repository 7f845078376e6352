"""ViT tokenizer model: config algebra, layers, variants and checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .config import SIZES, ConfigError, ModelConfig, count_params, estimate_flops, mlp_hidden
from .rope import RopeTables, grid_positions, rope_3d_rotate
from .vitok import (
    LatentCode,
    ParamStore,
    decode,
    encode,
    identity_params,
    init_params,
    mask_tail,
    quantize_latent,
    reconstruct,
    token_lengths,
    transformer_block,
    tubelet_embed,
    tubelet_unembed,
)

__all__ = [
    "SIZES",
    "CheckpointError",
    "ConfigError",
    "LatentCode",
    "ModelConfig",
    "ParamStore",
    "RopeTables",
    "count_params",
    "decode",
    "encode",
    "estimate_flops",
    "grid_positions",
    "identity_params",
    "init_params",
    "load_checkpoint",
    "mask_tail",
    "mlp_hidden",
    "quantize_latent",
    "read_tensors",
    "reconstruct",
    "rope_3d_rotate",
    "save_checkpoint",
    "token_lengths",
    "transformer_block",
    "tubelet_embed",
    "tubelet_unembed",
    "write_tensors",
]
