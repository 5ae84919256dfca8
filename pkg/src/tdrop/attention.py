"""Multi-head self-attention with thresholded attention dropout.

The dropout reweights a head's attention matrix: with gate probability
p_attn, every weight strictly above lambda_attn times the matrix's global
maximum is erased, and each touched row is renormalized to sum to 1. Rows
whose surviving mass underflows are restored to their original values, and
untouched rows pass through bit-exact, so lambda_attn = 1, a failed gate,
and eval mode are all exact identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .runtime import ForwardContext
from .tensor import Tensor, concat_last, make_op, matmul, scale, slice_last, softmax_rows, transpose_last

_DEGENERATE_ROW_SUM = 1e-12


@dataclass
class AttentionConfig:
    d_attn: int
    heads: int
    p_attn: float = 0.1
    lambda_attn: float = 0.9

    def validate(self) -> "AttentionConfig":
        if self.d_attn <= 0 or self.heads <= 0:
            raise ConfigError(f"d_attn/heads must be positive, got {self.d_attn}/{self.heads}")
        if self.d_attn % self.heads != 0:
            raise ConfigError(
                f"d_attn ({self.d_attn}) must be divisible by heads ({self.heads})")
        if not 0.0 <= self.p_attn <= 1.0 or not 0.0 <= self.lambda_attn <= 1.0:
            raise ConfigError("p_attn and lambda_attn must be in [0, 1]")
        return self


@dataclass
class AttentionState:
    """Per-head tensors captured for one layer (capture mode only)."""

    q: list = field(default_factory=list)
    k: list = field(default_factory=list)
    v: list = field(default_factory=list)
    weights_before: list = field(default_factory=list)
    weights_after: list = field(default_factory=list)
    dropout_applied: list = field(default_factory=list)


@dataclass
class MhsaWeights:
    """Learned projections of one attention block (QKV are bias-free)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor


def project_qkv(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int):
    """Project into per-head query/key/value triples via head split."""
    d = wq.data.shape[-1]
    if x.data.shape[-1] != wq.data.shape[0]:
        raise ShapeError(
            f"project_qkv: input width {x.data.shape[-1]} does not match "
            f"projection rows {wq.data.shape[0]}")
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    head_dim = d // heads
    out = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        out.append((slice_last(q, lo, hi), slice_last(k, lo, hi), slice_last(v, lo, hi)))
    return out


def attention_weights(q_h: Tensor, k_h: Tensor, d_attn: int) -> Tensor:
    """Row-stochastic attention matrix: softmax(Q K^T / sqrt(d_attn))."""
    if q_h.data.shape != k_h.data.shape:
        raise ShapeError(
            f"attention_weights: Q {q_h.data.shape} and K {k_h.data.shape} differ")
    scores = scale(matmul(q_h, transpose_last(k_h)), 1.0 / math.sqrt(d_attn))
    return softmax_rows(scores)


def erase_mask(a: np.ndarray, lam: float) -> np.ndarray:
    """Boolean erase positions: entries strictly above lam * global max.

    The comparison runs in float64 so vectorized and scalar reference
    implementations agree on the mask bit-for-bit. The max is global over
    each trailing matrix (per batch element when a leading axis is present).
    """
    a64 = a.astype(np.float64, copy=False)
    gmax = a64.max(axis=(-2, -1), keepdims=True)
    return a64 > float(lam) * gmax


def masked_renorm_rows(a: Tensor, keep: np.ndarray, renorm_rows: np.ndarray) -> Tensor:
    """Erase-and-renormalize as one differentiable op with constant masks.

    keep: 0/1 per entry; renorm_rows: bool of shape (..., T, 1). Rows not
    flagged for renormalization pass through bit-exact (this covers both
    untouched rows and degenerate rows restored to their original values).
    """
    if not renorm_rows.any():
        return a
    x = a.data
    keep_f = keep.astype(x.dtype)
    y = x * keep_f
    s = y.sum(axis=-1, keepdims=True)
    s_safe = np.where(np.abs(s) < _DEGENERATE_ROW_SUM, x.dtype.type(1.0), s)
    sel = np.broadcast_to(renorm_rows, x.shape)
    out_data = np.where(sel, y / s_safe, x).astype(x.dtype)

    def rule(g):
        dot = np.where(sel, g * out_data, 0).sum(axis=-1, keepdims=True)
        a._accumulate(np.where(sel, keep_f * (g - dot) / s_safe, g).astype(x.dtype))

    return make_op(out_data, (a,), rule)


def _plan_dropout(a: np.ndarray, lam: float, fired: np.ndarray):
    """Derive (keep, renorm_rows) from values and per-matrix gate decisions.

    fired has one entry per leading matrix (shape () for a single matrix).
    Renormalization applies to fired rows that lost mass and still have at
    least _DEGENERATE_ROW_SUM of surviving weight; rows erased entirely are
    restored by leaving them out of the renormalization set.
    """
    erase = erase_mask(a, lam)
    fired = np.asarray(fired)
    if fired.ndim:
        erase &= fired.reshape(fired.shape + (1, 1))
    elif not bool(fired):
        erase &= False
    keep = ~erase
    surviving = (a.astype(np.float64, copy=False) * keep).sum(axis=-1, keepdims=True)
    touched = erase.any(axis=-1, keepdims=True)
    renorm_rows = touched & (surviving >= _DEGENERATE_ROW_SUM)
    return keep, renorm_rows


def attention_dropout(a: Tensor, cfg: AttentionConfig, mode: str, rng,
                      ctx: ForwardContext | None = None, pin_key=None) -> Tensor:
    """Thresholded dropout of one head's attention matrix.

    a is T x T or B x T x T (one gate draw per trailing matrix). Eval mode
    and failed gates return the input unchanged.
    """
    if a.data.size and a.data.min() < 0:
        raise ContractError("attention_dropout: negative attention weight")
    if ctx is None:
        ctx = ForwardContext(mode=mode, rng=rng, p_attn=cfg.p_attn)
    if not ctx.dropout_live() or a.data.shape[-1] == 0 or a.data.shape[-2] == 0:
        return a

    pins = ctx.pins
    if pins is not None and not pins.recording:
        plan = pins.replay_attn(pin_key)
        if plan is None:
            return a
        return masked_renorm_rows(a, *plan)

    batched = a.data.ndim == 3
    if ctx.force_gates:
        fired = np.ones(a.data.shape[0], dtype=bool) if batched else True
    else:
        p = ctx.p_attn
        if batched:
            fired = np.array([ctx.rng.gate(p) for _ in range(a.data.shape[0])])
        else:
            fired = ctx.rng.gate(p)

    n_fired = int(np.sum(fired)) if batched else int(bool(fired))
    if ctx.stats is not None:
        ctx.stats.attn_fires += n_fired

    if n_fired == 0:
        plan = None
    else:
        keep, renorm_rows = _plan_dropout(a.data, cfg.lambda_attn, np.asarray(fired))
        plan = (keep, renorm_rows) if renorm_rows.any() else None

    if pins is not None:
        pins.record_attn(pin_key, plan)
    if plan is None:
        return a
    return masked_renorm_rows(a, *plan)


def mhsa_forward(x: Tensor, weights: MhsaWeights, cfg: AttentionConfig,
                 mode: str = "eval", rng=None, ctx: ForwardContext | None = None,
                 layer_idx: int = 0) -> Tensor:
    """Full multi-head block: project, attend (with dropout), merge heads."""
    if x.data.shape[-1] != cfg.d_attn:
        raise ShapeError(
            f"mhsa_forward: input width {x.data.shape[-1]} != d_attn {cfg.d_attn}")
    if ctx is None:
        ctx = ForwardContext(mode=mode, rng=rng, p_attn=cfg.p_attn)

    cap = None
    if ctx.capture is not None:
        cap = AttentionState()
        ctx.capture.attention[layer_idx] = cap

    head_outputs = []
    for h, (q_h, k_h, v_h) in enumerate(
            project_qkv(x, weights.wq, weights.wk, weights.wv, cfg.heads)):
        a_h = attention_weights(q_h, k_h, cfg.d_attn)
        a_dropped = attention_dropout(a_h, cfg, ctx.mode, ctx.rng,
                                      ctx=ctx, pin_key=(layer_idx, h))
        if cap is not None:
            cap.q.append(np.array(q_h.data, copy=True))
            cap.k.append(np.array(k_h.data, copy=True))
            cap.v.append(np.array(v_h.data, copy=True))
            cap.weights_before.append(np.array(a_h.data, copy=True))
            cap.weights_after.append(np.array(a_dropped.data, copy=True))
            cap.dropout_applied.append(a_dropped is not a_h)
        head_outputs.append(matmul(a_dropped, v_h))

    merged = concat_last(head_outputs)
    return matmul(merged, weights.wo) + weights.bo
