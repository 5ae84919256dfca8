"""Forward-pass plumbing shared by the attention and encoder modules.

A ForwardContext carries the mode, the rng for gate draws, the effective
dropout probabilities for this pass (the fusion schedule may override the
configured ones), and optional hooks: mask pinning for gradient checks,
capture buffers for visualization, and gate-fire counters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng


class GateStats:
    """Counts how many dropout gates fired during forward passes."""

    __slots__ = ("attn_fires", "layer_fires")

    def __init__(self):
        self.attn_fires = 0
        self.layer_fires = 0


class MaskPins:
    """Record dropout decisions on one pass, replay them on later passes.

    Finite-difference validation re-evaluates the network while parameters
    move; the erasure masks must stay frozen or the loss is discontinuous.
    """

    def __init__(self):
        self.recording = True
        self._attn: dict = {}
        self._layer: dict = {}

    def freeze(self) -> None:
        self.recording = False

    def record_attn(self, key, value) -> None:
        self._attn[key] = value

    def replay_attn(self, key):
        return self._attn[key]

    def record_layer(self, key, value) -> None:
        self._layer[key] = value

    def replay_layer(self, key):
        return self._layer[key]


class CaptureState:
    """Pre/post dropout copies collected for the visualizer."""

    def __init__(self):
        self.attention: dict = {}     # (layer, head) -> AttentionState
        self.feature_maps: dict = {}  # layer -> (before, after) ndarrays


@dataclass
class ForwardContext:
    mode: str = "eval"                 # "train" | "eval"
    rng: Rng | None = None
    p_attn: float = 0.0
    p_layer: float = 0.0
    force_gates: bool = False
    pins: MaskPins | None = None
    capture: CaptureState | None = None
    stats: GateStats | None = None

    @classmethod
    def for_eval(cls) -> "ForwardContext":
        return cls(mode="eval")

    @classmethod
    def for_train(cls, rng: Rng, p_attn: float, p_layer: float, **kw) -> "ForwardContext":
        return cls(mode="train", rng=rng, p_attn=p_attn, p_layer=p_layer, **kw)

    def dropout_live(self) -> bool:
        return self.mode == "train" or self.force_gates
