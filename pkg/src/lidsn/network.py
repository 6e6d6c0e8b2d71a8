"""Dual-stream network: tokenizers, interactive attention, fusion, classifier.

All blocks take batched tensors ([B, C, T] inputs, [B, rows, D] token grids)
and are pure functions of (tensors, params, cfg) except for train-mode
batchnorm, which updates its running state, and dropout, which draws from the
rng handed to forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import ShapeError
from .params import ParamSet, init_params
from .rng import RngStream
from . import tensor as tz
from .tensor import Tape, Tensor, backward


@dataclass
class ForwardTrace:
    """Attention and feature intermediates captured during one forward pass.

    Arrays are detached numpy copies with a leading batch axis; one list entry
    per layer. The *_rev fields fill only for st2s/bidir integration.
    """

    spatial_attention: list = field(default_factory=list)   # [B, H, C, C]
    channel_importance: list = field(default_factory=list)  # [B, H, C]
    temporal_attention: list = field(default_factory=list)  # [B, H, dh, dh]
    spatial_attention_rev: list = field(default_factory=list)
    channel_importance_rev: list = field(default_factory=list)
    temporal_attention_rev: list = field(default_factory=list)
    features_pre: list = field(default_factory=list)         # [B, P, D]
    features_post: list = field(default_factory=list)        # [B, P, D]
    patch_weights: np.ndarray | None = None                  # [B, P]

    def for_trial(self, i: int) -> dict:
        out = {
            "spatial_attention": [a[i] for a in self.spatial_attention],
            "channel_importance": [a[i] for a in self.channel_importance],
            "temporal_attention": [a[i] for a in self.temporal_attention],
            "features_pre": [a[i] for a in self.features_pre],
            "features_post": [a[i] for a in self.features_post],
        }
        if self.patch_weights is not None:
            out["patch_weights"] = self.patch_weights[i]
        return out


def temporal_tokenize(x: Tensor, params: ParamSet, cfg: ModelConfig, training: bool) -> Tensor:
    """[B, C, T] -> [B, P, D]: pointwise mix, batchnorm, depthwise conv, GELU, pool."""
    y = tz.conv1d_pointwise(
        x, params["temporal_tokenizer.pointwise.weight"], params["temporal_tokenizer.pointwise.bias"]
    )
    y = tz.batchnorm(
        y,
        params["temporal_tokenizer.norm.gain"],
        params["temporal_tokenizer.norm.bias"],
        params.states["temporal_tokenizer.norm"],
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    )
    y = tz.conv1d_depthwise(
        y, params["temporal_tokenizer.depthwise.weight"], params["temporal_tokenizer.depthwise.bias"]
    )
    y = tz.gelu(y)
    y = tz.avgpool1d(y, cfg.pool_window, cfg.pool_stride)
    return tz.swapaxes(y, 1, 2)


def spatial_tokenize(x: Tensor, params: ParamSet, cfg: ModelConfig, training: bool) -> Tensor:
    """[B, C, T] -> [B, C, D]: shared per-channel conv, GELU, batchnorm, pool, project.

    Channels are processed independently with shared weights, so the batch and
    channel axes fold together for the conv and its batchnorm.
    """
    b, c, t = x.shape
    xr = tz.reshape(x, (b * c, 1, t))
    y = tz.conv1d(
        xr,
        params["spatial_tokenizer.conv.weight"],
        params["spatial_tokenizer.conv.bias"],
        stride=cfg.spatial_conv_stride,
    )
    y = tz.gelu(y)
    y = tz.batchnorm(
        y,
        params["spatial_tokenizer.norm.gain"],
        params["spatial_tokenizer.norm.bias"],
        params.states["spatial_tokenizer.norm"],
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    )
    y = tz.avgpool1d(y, cfg.spatial_pool_window, cfg.spatial_pool_stride)
    y = tz.reshape(y, (b, c, cfg.spatial_maps * cfg.spatial_patches))
    return tz.matmul(y, params["spatial_tokenizer.proj.weight"])


def ffn_block(
    z: Tensor, params: ParamSet, prefix: str, cfg: ModelConfig, rng: RngStream | None, training: bool
) -> Tensor:
    """z + Dropout(W_b GELU(W_a LayerNorm(z)))."""
    h = tz.layernorm(z, params[f"{prefix}.norm.gain"], params[f"{prefix}.norm.bias"], cfg.ln_eps)
    h = tz.matmul(h, params[f"{prefix}.expand.weight"]) + params[f"{prefix}.expand.bias"]
    h = tz.gelu(h)
    h = tz.matmul(h, params[f"{prefix}.contract.weight"]) + params[f"{prefix}.contract.bias"]
    h = tz.dropout(h, cfg.dropout, rng, training)
    return tz.add(z, h)


def _heads(z: Tensor, w: Tensor) -> Tensor:
    """[B, M, D] x [H, D, dh] -> [B, H, M, dh] via broadcast matmul."""
    b, m, d = z.shape
    return tz.matmul(tz.reshape(z, (b, 1, m, d)), w)


def pooled_context(source: Tensor, params: ParamSet, prefix: str, embed: str, cfg: ModelConfig):
    """Attention-pooled summary of the source stream.

    Returns (s_pool [B, H, dh], affinity [B, H, M, M], importance [B, H, M]).
    """
    y1 = _heads(source, params[f"{prefix}.query_a"])
    y2 = _heads(source, params[f"{prefix}.query_b"])
    if cfg.use_electrode_pos_embedding:
        pos = params[f"{prefix}.{embed}"]
        y1 = tz.add(y1, pos)
        y2 = tz.add(y2, pos)
    scores = tz.scale(tz.matmul(y1, tz.swapaxes(y2, -1, -2)), 1.0 / np.sqrt(cfg.head_dim))
    affinity = tz.softmax(scores, axis=-1)
    importance = tz.softmax(tz.l2norm(y1, axis=-1), axis=-1)
    context = tz.matmul(affinity, y1)
    b, h, m, dh = context.shape
    weighted = tz.mul(tz.reshape(importance, (b, h, m, 1)), context)
    s_pool = tz.reduce_sum(weighted, axis=2)
    return s_pool, affinity, importance


def gated_refine(target: Tensor, params: ParamSet, prefix: str, cfg: ModelConfig):
    """Cosine-gated feature-dimension attention over the target stream.

    Returns (refined [B, H, M, dh], attention [B, H, dh, dh]).
    """
    x1 = _heads(target, params[f"{prefix}.value"])
    if cfg.use_cosine_gate:
        phase = _heads(target, params[f"{prefix}.gate"])
        x1 = tz.mul(x1, tz.cosine(phase))
    keys = _heads(target, params[f"{prefix}.key"])
    m = target.shape[1]
    scores = tz.scale(tz.matmul(tz.swapaxes(x1, -1, -2), keys), 1.0 / np.sqrt(m))
    attention = tz.softmax(scores, axis=-1)
    refined = tz.matmul(x1, attention)
    return refined, attention


def integrate(refined: Tensor, s_pool: Tensor, params: ParamSet, prefix: str) -> Tensor:
    """Gate refined target tokens by the pooled source summary, merge heads, project."""
    b, h, m, dh = refined.shape
    gated = tz.mul(refined, tz.reshape(s_pool, (b, h, 1, dh)))
    merged = tz.reshape(tz.swapaxes(gated, 1, 2), (b, m, h * dh))
    return tz.matmul(merged, params[f"{prefix}.out.weight"])


def tsia_apply(source: Tensor, target: Tensor, params: ParamSet, prefix: str, embed: str,
               cfg: ModelConfig):
    """Full interactive attention: pool the source, refine the target, gate, project."""
    s_pool, affinity, importance = pooled_context(source, params, prefix, embed, cfg)
    refined, attention = gated_refine(target, params, prefix, cfg)
    out = integrate(refined, s_pool, params, prefix)
    return out, affinity, importance, attention


def sacm_context(z_s: Tensor, params: ParamSet, layer: int, cfg: ModelConfig):
    """Head-concatenated pooled summary broadcast over patches: [B, P, D].

    Thin wrapper over pooled_context for callers that want the broadcast form.
    """
    s_pool, affinity, importance = pooled_context(
        z_s, params, f"layer{layer}.tsia", "electrode_embedding", cfg
    )
    b = z_s.shape[0]
    flat = tz.reshape(s_pool, (b, 1, cfg.embed_dim))
    ones = Tensor(np.ones((1, cfg.n_patches, 1), dtype=z_s.dtype))
    return tz.mul(ones, flat), affinity, importance


def run_layers(
    z_t: Tensor,
    z_s: Tensor,
    params: ParamSet,
    cfg: ModelConfig,
    rng: RngStream | None,
    training: bool,
    trace: ForwardTrace | None = None,
):
    """Stacked dual-stream layers with the configured integration direction."""
    for layer in range(cfg.temporal_depth):
        if layer < cfg.spatial_depth:
            z_s = ffn_block(z_s, params, f"layer{layer}.spatial_ffn", cfg, rng, training)
        h_t = ffn_block(z_t, params, f"layer{layer}.temporal_ffn", cfg, rng, training)
        if trace is not None:
            trace.features_pre.append(h_t.data.copy())
        if not cfg.use_tsia:
            pooled = tz.reduce_mean(z_s, axis=1)
            b = z_s.shape[0]
            ones = Tensor(np.ones((1, cfg.n_patches, 1), dtype=z_s.dtype))
            spread = tz.mul(ones, tz.reshape(pooled, (b, 1, cfg.embed_dim)))
            cat = tz.concat([h_t, spread], axis=-1)
            z_t = tz.matmul(cat, params[f"layer{layer}.concat_proj.weight"])
        elif cfg.integration_mode == "st2t":
            z_t, aff, imp, att = tsia_apply(
                z_s, h_t, params, f"layer{layer}.tsia", "electrode_embedding", cfg
            )
            if trace is not None:
                trace.spatial_attention.append(aff.data.copy())
                trace.channel_importance.append(imp.data.copy())
                trace.temporal_attention.append(att.data.copy())
        elif cfg.integration_mode == "st2s":
            z_s_new, aff, imp, att = tsia_apply(
                h_t, z_s, params, f"layer{layer}.tsia_rev", "token_embedding", cfg
            )
            if trace is not None:
                trace.spatial_attention_rev.append(aff.data.copy())
                trace.channel_importance_rev.append(imp.data.copy())
                trace.temporal_attention_rev.append(att.data.copy())
            z_t, z_s = h_t, z_s_new
        elif cfg.integration_mode == "bidir":
            z_t_new, aff, imp, att = tsia_apply(
                z_s, h_t, params, f"layer{layer}.tsia", "electrode_embedding", cfg
            )
            z_s_new, aff_r, imp_r, att_r = tsia_apply(
                h_t, z_s, params, f"layer{layer}.tsia_rev", "token_embedding", cfg
            )
            if trace is not None:
                trace.spatial_attention.append(aff.data.copy())
                trace.channel_importance.append(imp.data.copy())
                trace.temporal_attention.append(att.data.copy())
                trace.spatial_attention_rev.append(aff_r.data.copy())
                trace.channel_importance_rev.append(imp_r.data.copy())
                trace.temporal_attention_rev.append(att_r.data.copy())
            z_t, z_s = z_t_new, z_s_new
        else:  # none: streams stay independent
            z_t = h_t
        if trace is not None:
            trace.features_post.append(z_t.data.copy())
    return z_t, z_s


def fuse(z_t: Tensor, z_s: Tensor, params: ParamSet, cfg: ModelConfig,
         trace: ForwardTrace | None = None) -> Tensor:
    """Collapse both streams to one [B, 2D] vector."""
    b = z_t.shape[0]
    if cfg.fusion_mode == "adaptive":
        cw = tz.reshape(params["fusion.channel_weights"], (cfg.n_channels, 1))
        zs_vec = tz.reduce_sum(tz.mul(z_s, cw), axis=1)
        h = tz.matmul(z_t, params["fusion.score.hidden.weight"]) + params["fusion.score.hidden.bias"]
        h = tz.relu(h)
        scores = tz.matmul(h, params["fusion.score.out.weight"]) + params["fusion.score.out.bias"]
        alpha = tz.softmax(tz.reshape(scores, (b, cfg.n_patches)), axis=-1)
        if trace is not None:
            trace.patch_weights = alpha.data.copy()
        zt_vec = tz.reduce_sum(tz.mul(tz.reshape(alpha, (b, cfg.n_patches, 1)), z_t), axis=1)
    else:
        zt_vec = tz.reduce_mean(z_t, axis=1)
        zs_vec = tz.reduce_mean(z_s, axis=1)
    return tz.concat([zt_vec, zs_vec], axis=-1)


def classify(u: Tensor, params: ParamSet) -> Tensor:
    h = tz.matmul(u, params["classifier.hidden.weight"]) + params["classifier.hidden.bias"]
    h = tz.relu(h)
    return tz.matmul(h, params["classifier.out.weight"]) + params["classifier.out.bias"]


def forward(
    x: Tensor,
    params: ParamSet,
    cfg: ModelConfig,
    rng: RngStream | None = None,
    training: bool = False,
    trace: ForwardTrace | None = None,
) -> Tensor:
    """Batched forward pass: [B, C, T] -> logits [B, n_classes]."""
    if x.ndim != 3 or x.shape[1] != cfg.n_channels or x.shape[2] != cfg.n_samples:
        raise ShapeError(
            f"forward expects [B, {cfg.n_channels}, {cfg.n_samples}], got {x.shape}"
        )
    z_t = temporal_tokenize(x, params, cfg, training)
    z_s = spatial_tokenize(x, params, cfg, training)
    if cfg.use_positional_embedding:
        z_t = tz.add(z_t, params["position.temporal"])
        z_s = tz.add(z_s, params["position.spatial"])
    z_t, z_s = run_layers(z_t, z_s, params, cfg, rng, training, trace)
    u = fuse(z_t, z_s, params, cfg, trace)
    return classify(u, params)


class Model:
    """Configured network: parameter set plus forward conveniences."""

    def __init__(self, cfg: ModelConfig, params: ParamSet):
        self.cfg = cfg.validate()
        self.params = params

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int) -> "Model":
        return cls(cfg, init_params(cfg, seed))

    def forward(self, x, rng=None, training=False, trace=None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.cfg.np_dtype))
        return forward(x, self.params, self.cfg, rng, training, trace)

    def logits_np(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode logits for a numpy batch, chunked to bound memory."""
        outs = []
        for lo in range(0, x.shape[0], batch_size):
            chunk = Tensor(x[lo : lo + batch_size].astype(self.cfg.np_dtype))
            outs.append(self.forward(chunk).data)
        return np.concatenate(outs, axis=0)

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return np.argmax(self.logits_np(x, batch_size), axis=1)


def saliency(x: np.ndarray, model: Model, class_index: int | None = None) -> np.ndarray:
    """Input-gradient saliency map for one trial, max-normalized to [0, 1].

    x: [C, T]. class_index defaults to the predicted class.
    """
    xt = Tensor(np.asarray(x, dtype=model.cfg.np_dtype)[None], requires_grad=True)
    with Tape() as tape:
        logits = model.forward(xt)
        if class_index is None:
            class_index = int(np.argmax(logits.data[0]))
        target = tz.select(logits, (0, int(class_index)))
        backward(target, tape)
    sal = np.abs(xt.grad[0])
    peak = sal.max()
    if peak > 0:
        sal = sal / peak
    return sal
