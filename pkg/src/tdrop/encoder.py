"""Transformer encoder stack with thresholded layer dropout.

Each layer is pre-norm: norm -> self-attention (with attention dropout) ->
residual, then norm -> feed-forward (GELU) -> layer dropout -> residual.
Layer dropout zeroes feed-forward outputs whose absolute value strictly
exceeds lambda_layer times the map's absolute maximum; survivors are not
rescaled. The stack projects mel features up to the attention width, adds
fixed sinusoidal position codes, and exposes a linear reconstruction head.
"""

from __future__ import annotations

import math

import numpy as np

from .attention import AttentionConfig, MhsaWeights, mhsa_forward
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .rng import Rng
from .runtime import ForwardContext
from .tensor import Tensor, add, gelu, layer_norm, matmul, mul


def layer_dropout_mask(x: np.ndarray, lam: float) -> np.ndarray:
    """Binary keep map: 0 where |x| strictly exceeds lam * max|x|.

    Comparison in float64 (exact for float32 inputs) over the trailing
    matrix; a leading batch axis gets an independent max per element.
    """
    a64 = np.abs(x.astype(np.float64, copy=False))
    xmax = a64.max(axis=(-2, -1), keepdims=True)
    return ~(a64 > float(lam) * xmax)


def layer_dropout(x: Tensor, cfg: ModelConfig, mode: str = "eval", rng: Rng | None = None,
                  ctx: ForwardContext | None = None, pin_key=None) -> Tensor:
    """Threshold-mask the most active entries of a feature map.

    One gate draw per trailing matrix per forward pass; eval mode and failed
    gates return the input unchanged. Surviving entries are bit-identical.
    """
    if ctx is None:
        ctx = ForwardContext(mode=mode, rng=rng, p_layer=cfg.p_layer)
    if not ctx.dropout_live() or x.data.shape[-1] == 0 or x.data.shape[-2] == 0:
        return x

    pins = ctx.pins
    if pins is not None and not pins.recording:
        mask = pins.replay_layer(pin_key)
        if mask is None:
            return x
        return mul(x, Tensor(mask.astype(x.data.dtype)))

    batched = x.data.ndim == 3
    if ctx.force_gates:
        fired = np.ones(x.data.shape[0], dtype=bool) if batched else True
    else:
        p = ctx.p_layer
        if batched:
            fired = np.array([ctx.rng.gate(p) for _ in range(x.data.shape[0])])
        else:
            fired = ctx.rng.gate(p)

    n_fired = int(np.sum(fired)) if batched else int(bool(fired))
    if ctx.stats is not None:
        ctx.stats.layer_fires += n_fired

    mask = None
    if n_fired:
        keep = layer_dropout_mask(x.data, cfg.lambda_layer)
        if batched:
            keep |= ~np.asarray(fired).reshape(-1, 1, 1)
        if not keep.all():
            mask = keep
    if pins is not None:
        pins.record_layer(pin_key, mask)
    if mask is None:
        return x
    return mul(x, Tensor(mask.astype(x.data.dtype)))


def sinusoidal_positions(t: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sine/cosine position codes, one row per frame."""
    pe = np.zeros((t, d), dtype=np.float64)
    if t:
        pos = np.arange(t, dtype=np.float64)[:, None]
        div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-math.log(10000.0) / d))
        pe[:, 0::2] = np.sin(pos * div)
        pe[:, 1::2] = np.cos(pos * div[: (d // 2)])
    return pe.astype(dtype)


def _glorot(rng: Rng, fan_in: int, fan_out: int, dtype, gain: float = 1.0) -> np.ndarray:
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    u = rng.uniforms((fan_in, fan_out)) * 2.0 - 1.0
    return (u * limit).astype(dtype)


# reconstruction head starts near zero so the untrained model predicts ~0
# and the step-0 loss is close to the mean absolute input
_HEAD_INIT_GAIN = 0.01


class TransformerEncoder:
    """Encoder stack plus reconstruction head over named parameters."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.attn_cfg = AttentionConfig(
            d_attn=cfg.d_attn, heads=cfg.heads,
            p_attn=cfg.p_attn, lambda_attn=cfg.lambda_attn).validate()
        self.params: dict[str, Tensor] = {}
        self._pe_cache: dict[int, np.ndarray] = {}
        d, f = cfg.d_attn, cfg.d_ff

        def param(name, data):
            self.params[name] = Tensor(data, requires_grad=True, dtype=dtype)
            return self.params[name]

        param("input.w", _glorot(rng, cfg.d_mel, d, dtype))
        param("input.b", np.zeros(d, dtype=dtype))
        for l in range(cfg.layers):
            p = f"layer{l}"
            param(f"{p}.ln1.gain", np.ones(d, dtype=dtype))
            param(f"{p}.ln1.bias", np.zeros(d, dtype=dtype))
            param(f"{p}.attn.wq", _glorot(rng, d, d, dtype))
            param(f"{p}.attn.wk", _glorot(rng, d, d, dtype))
            param(f"{p}.attn.wv", _glorot(rng, d, d, dtype))
            param(f"{p}.attn.wo", _glorot(rng, d, d, dtype))
            param(f"{p}.attn.bo", np.zeros(d, dtype=dtype))
            param(f"{p}.ln2.gain", np.ones(d, dtype=dtype))
            param(f"{p}.ln2.bias", np.zeros(d, dtype=dtype))
            param(f"{p}.ff.w1", _glorot(rng, d, f, dtype))
            param(f"{p}.ff.b1", np.zeros(f, dtype=dtype))
            param(f"{p}.ff.w2", _glorot(rng, f, d, dtype))
            param(f"{p}.ff.b2", np.zeros(d, dtype=dtype))
        param("head.w", _glorot(rng, d, cfg.d_mel, dtype, gain=_HEAD_INIT_GAIN))
        param("head.b", np.zeros(cfg.d_mel, dtype=dtype))

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def _attn_weights(self, l: int) -> MhsaWeights:
        p = self.params
        return MhsaWeights(p[f"layer{l}.attn.wq"], p[f"layer{l}.attn.wk"],
                           p[f"layer{l}.attn.wv"], p[f"layer{l}.attn.wo"],
                           p[f"layer{l}.attn.bo"])

    def _positions(self, t: int) -> np.ndarray:
        pe = self._pe_cache.get(t)
        if pe is None:
            pe = sinusoidal_positions(t, self.cfg.d_attn, self.dtype)
            self._pe_cache[t] = pe
        return pe

    def layer_forward(self, x: Tensor, l: int, ctx: ForwardContext) -> Tensor:
        p = self.params
        pre = f"layer{l}"
        h = layer_norm(x, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        x = add(x, mhsa_forward(h, self._attn_weights(l), self.attn_cfg,
                                ctx=ctx, layer_idx=l))
        h = layer_norm(x, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        ff = add(matmul(gelu(add(matmul(h, p[f"{pre}.ff.w1"]), p[f"{pre}.ff.b1"])),
                        p[f"{pre}.ff.w2"]), p[f"{pre}.ff.b2"])
        if ctx.capture is not None:
            before = np.array(ff.data, copy=True)
        ff = layer_dropout(ff, self.cfg, ctx=ctx, pin_key=l)
        if ctx.capture is not None:
            ctx.capture.feature_maps[l] = (before, np.array(ff.data, copy=True))
        return add(x, ff)

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> list[Tensor]:
        """Project, position-encode, run all layers; returns X_1..X_L."""
        if ctx is None:
            ctx = ForwardContext.for_eval()
        if x.data.shape[-1] != self.cfg.d_mel:
            raise ShapeError(
                f"encoder input width {x.data.shape[-1]} != d_mel {self.cfg.d_mel}")
        t = x.data.shape[-2]
        h = add(matmul(x, self.params["input.w"]), self.params["input.b"])
        h = add(h, Tensor(self._positions(t)))
        outputs = []
        for l in range(self.cfg.layers):
            h = self.layer_forward(h, l, ctx)
            outputs.append(h)
        return outputs

    def reconstruct(self, x_l: Tensor) -> Tensor:
        """Project the last hidden layer back to mel width."""
        return add(matmul(x_l, self.params["head.w"]), self.params["head.b"])

    def representation(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        return self.forward(x, ctx)[-1]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigError(
                f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"parameter '{name}' shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()
