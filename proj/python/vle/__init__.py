"""Python bindings for the variable-length image encoder."""

from ._vle import (
    Codec,
    ConfigError,
    ContractError,
    FormatError,
    NumericError,
    TokenSampler,
    default_config,
    distinctness_loss,
    ingest,
    masked_rec_loss,
    mse,
    quantization_ladder,
    run_stub,
    shannon_entropy,
    spearman,
    ssim,
    synthetic_blobs,
    train,
)

__all__ = [
    "Codec",
    "ConfigError",
    "ContractError",
    "FormatError",
    "NumericError",
    "TokenSampler",
    "default_config",
    "distinctness_loss",
    "ingest",
    "masked_rec_loss",
    "mse",
    "quantization_ladder",
    "run_stub",
    "shannon_entropy",
    "spearman",
    "ssim",
    "synthetic_blobs",
    "train",
]
