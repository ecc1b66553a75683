"""Turning per-step uncertainty into a default / keep-learning decision."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("none", "ND", "A", "V")


class Decision(enum.Enum):
    USE_LEARNED = "learned"
    DEFAULT = "default"


@dataclass(frozen=True)
class ControllerConfig:
    """``k_window`` is the variance window for ensemble schemes.

    For ND the sample length ``k`` lives in the detector itself.
    """

    scheme: str = "none"
    k_window: int = 5
    l_consecutive: int = 3
    alpha: float = math.inf
    sticky: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.k_window < 1 or self.l_consecutive < 1:
            raise ValueError("k_window and l_consecutive must be >= 1")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class ControllerState:
    recent_scores: deque = field(default_factory=deque)
    consecutive: int = 0
    defaulted: bool = False

    @classmethod
    def fresh(cls, cfg: ControllerConfig) -> "ControllerState":
        return cls(deque(maxlen=cfg.k_window))


def _register(state: ControllerState, triggered: bool, cfg: ControllerConfig) -> Decision:
    if state.defaulted and cfg.sticky:
        return Decision.DEFAULT
    state.consecutive = min(state.consecutive + 1, cfg.l_consecutive) if triggered else 0
    if state.consecutive >= cfg.l_consecutive:
        state.defaulted = True
        return Decision.DEFAULT
    state.defaulted = False
    return Decision.USE_LEARNED


def nd_update(state: ControllerState, ood: bool, cfg: ControllerConfig) -> Decision:
    """Default after ``l`` consecutive out-of-distribution flags."""
    if cfg.scheme != "ND":
        raise ValueError("nd_update needs an ND controller")
    return _register(state, bool(ood), cfg)


def window_variance(scores) -> float:
    """Population variance of the window."""
    return float(np.var(np.asarray(scores, dtype=float)))


def ensemble_update(state: ControllerState, score: float, cfg: ControllerConfig) -> Decision:
    """Push a score; trigger when the full window's variance exceeds alpha."""
    if cfg.scheme not in ("A", "V"):
        raise ValueError("ensemble_update needs an A or V controller")
    value = getattr(score, "value", score)
    state.recent_scores.append(float(value))
    triggered = (len(state.recent_scores) == cfg.k_window
                 and window_variance(state.recent_scores) > cfg.alpha)
    return _register(state, triggered, cfg)


def rolling_variances(scores, k: int) -> np.ndarray:
    """Window variance after each step (NaN until ``k`` scores exist)."""
    s = np.asarray(scores, dtype=float)
    out = np.full(s.size, np.nan)
    for t in range(k - 1, s.size):
        out[t] = window_variance(s[t - k + 1:t + 1])
    return out


def first_default_step(variances: np.ndarray, alpha: float, l: int) -> int | None:
    """Step at which a sticky ensemble controller first defaults, or None."""
    run = 0
    for t, v in enumerate(variances):
        run = run + 1 if (not np.isnan(v) and v > alpha) else 0
        if run >= l:
            return t
    return None
