"""Continual-learning strategies behind one lifecycle contract."""

from __future__ import annotations

from ..errors import ConfigError
from .base import (
    REPLAY_KINDS,
    STRATEGY_KINDS,
    Naive,
    Strategy,
    StrategyConfig,
    StreamInfo,
    default_lambda,
)
from .hat import HAT, hat_gate, hat_gradient_gate
from .regularization import (
    EWC,
    SI,
    LwF,
    ewc_consolidate,
    ewc_penalty,
    lwf_targets,
    si_accumulate,
    si_consolidate,
)
from .replay import (
    AGEM,
    GSS,
    ICaRL,
    ReplayBuffer,
    agem_project,
    gss_score,
    gss_update_buffer,
    icarl_build_exemplars,
    nearest_mean_classify,
    normalized_features,
    replay_sample,
)

_REGISTRY: dict[str, type[Strategy]] = {
    "naive": Naive,
    "lwf": LwF,
    "ewc": EWC,
    "si": SI,
    "icarl": ICaRL,
    "agem": AGEM,
    "gss": GSS,
    "hat": HAT,
}


def make_strategy(cfg: StrategyConfig, info: StreamInfo) -> Strategy:
    if cfg.kind not in _REGISTRY:
        raise ConfigError(f"unknown strategy kind {cfg.kind!r}")
    return _REGISTRY[cfg.kind](cfg, info)


__all__ = [
    "AGEM", "EWC", "GSS", "HAT", "ICaRL", "LwF", "Naive", "SI",
    "ReplayBuffer", "Strategy", "StrategyConfig", "StreamInfo",
    "REPLAY_KINDS", "STRATEGY_KINDS",
    "agem_project", "default_lambda", "ewc_consolidate", "ewc_penalty",
    "gss_score", "gss_update_buffer", "hat_gate", "hat_gradient_gate",
    "icarl_build_exemplars", "lwf_targets", "make_strategy",
    "nearest_mean_classify", "normalized_features", "replay_sample",
    "si_accumulate", "si_consolidate",
]
