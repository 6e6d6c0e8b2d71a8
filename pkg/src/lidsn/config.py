"""Model configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError

INTEGRATION_MODES = ("st2t", "st2s", "bidir", "none")
FUSION_MODES = ("adaptive", "mean-concat")


@dataclass(frozen=True)
class ModelConfig:
    """Geometry and switches for one network.

    n_channels/n_samples/n_classes describe the input epochs; everything else
    defaults to the reference motor-imagery setting.
    """

    n_channels: int
    n_samples: int
    n_classes: int
    embed_dim: int = 40
    spatial_maps: int = 16
    n_heads: int = 4
    temporal_depth: int = 3
    spatial_depth: int = 3
    dropout: float = 0.25
    ffn_expansion: int = 4
    kernel_len: int = 25
    pool_window: int = 50
    pool_stride: int = 50
    spatial_conv_stride: int = 10
    spatial_pool_window: int = 10
    spatial_pool_stride: int = 10
    integration_mode: str = "st2t"
    fusion_mode: str = "adaptive"
    use_positional_embedding: bool = True
    use_cosine_gate: bool = True
    use_electrode_pos_embedding: bool = True
    use_tsia: bool = True
    head_shared_electrode_embedding: bool = False
    classifier_hidden: int = 32
    fusion_hidden: int = 0  # 0 means embed_dim // 2
    ln_eps: float = 1e-5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    dtype: str = "float64"

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def n_patches(self) -> int:
        """Temporal token count P."""
        return (self.n_samples - self.pool_window) // self.pool_stride + 1

    @property
    def spatial_conv_len(self) -> int:
        """Length of the spatial tokenizer's strided conv output."""
        return (self.n_samples - 1) // self.spatial_conv_stride + 1

    @property
    def spatial_patches(self) -> int:
        """Pooled sub-window count inside the spatial tokenizer."""
        return (self.spatial_conv_len - self.spatial_pool_window) // self.spatial_pool_stride + 1

    @property
    def fusion_width(self) -> int:
        return self.fusion_hidden if self.fusion_hidden > 0 else self.embed_dim // 2

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def validate(self) -> "ModelConfig":
        if self.n_channels < 1 or self.n_samples < 1 or self.n_classes < 2:
            raise ConfigError(
                f"need n_channels >= 1, n_samples >= 1, n_classes >= 2; got "
                f"{self.n_channels}/{self.n_samples}/{self.n_classes}"
            )
        if self.embed_dim < 1 or self.embed_dim % self.n_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be a positive multiple of n_heads {self.n_heads}"
            )
        if self.temporal_depth < 1:
            raise ConfigError(f"temporal_depth must be >= 1, got {self.temporal_depth}")
        if not 0 <= self.spatial_depth <= self.temporal_depth:
            raise ConfigError(
                f"spatial_depth must lie in [0, temporal_depth]; got "
                f"{self.spatial_depth} vs {self.temporal_depth}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ffn_expansion < 1:
            raise ConfigError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")
        if self.kernel_len < 1 or self.kernel_len % 2 == 0:
            raise ConfigError(f"kernel_len must be odd and >= 1, got {self.kernel_len}")
        for name in ("pool_window", "pool_stride", "spatial_conv_stride",
                     "spatial_pool_window", "spatial_pool_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pool_window > self.n_samples:
            raise ConfigError(
                f"pool_window {self.pool_window} exceeds n_samples {self.n_samples}"
            )
        if self.n_patches < 1:
            raise ConfigError("temporal tokenizer would produce zero patches")
        if self.spatial_pool_window > self.spatial_conv_len:
            raise ConfigError(
                f"spatial_pool_window {self.spatial_pool_window} exceeds conv output "
                f"length {self.spatial_conv_len}"
            )
        if self.spatial_patches < 1:
            raise ConfigError("spatial tokenizer would produce zero pooled windows")
        if self.integration_mode not in INTEGRATION_MODES:
            raise ConfigError(
                f"integration_mode must be one of {INTEGRATION_MODES}, got {self.integration_mode!r}"
            )
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}"
            )
        if not self.use_tsia and self.integration_mode != "st2t":
            raise ConfigError("use_tsia=false is only defined for integration_mode 'st2t'")
        if self.classifier_hidden < 1:
            raise ConfigError(f"classifier_hidden must be >= 1, got {self.classifier_hidden}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be 'float64' or 'float32', got {self.dtype!r}")
        return self


def model_config_from_dict(raw: dict, **geometry) -> ModelConfig:
    """Build a validated ModelConfig from a plain dict, rejecting unknown keys."""
    known = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
    merged = dict(raw)
    merged.update(geometry)
    missing = sorted(k for k in ("n_channels", "n_samples", "n_classes") if k not in merged)
    if missing:
        raise ConfigError(f"model config missing required keys: {', '.join(missing)}")
    return ModelConfig(**merged).validate()
