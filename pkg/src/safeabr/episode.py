"""One streaming session with an optional safety layer in the loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controller import (ControllerConfig, ControllerState, Decision, ensemble_update, nd_update)
from .env import EnvConfig, SessionState, VideoManifest, initial_state, step
from .policies import (actor_forward, bb_decide, featurize, greedy, value_forward)
from .traces import Trace
from .uncertainty import OcSvmModel, nd_features, ocsvm_score, u_pi, u_v

POLICIES = ("agent", "bb", "random")
MIN_ENSEMBLE = 4


class ConfigMismatch(ValueError):
    pass


@dataclass
class Safeguard:
    """Models behind the safety layer.  ``agents[0]`` is the acting policy."""

    agents: list = field(default_factory=list)
    values: list = field(default_factory=list)
    detector: Optional[OcSvmModel] = None
    reservoir: float = 5.0
    cushion: float = 10.0
    # ensemble reference average taken over the survivors of the drop step
    recompute_mean: bool = True

    def feature_spec(self):
        specs = {a.feature_spec for a in self.agents} | {v.feature_spec for v in self.values}
        if len(specs) > 1:
            raise ConfigMismatch(f"agents and value functions disagree on features: {sorted(map(str, specs))}")
        return specs.pop() if specs else None


@dataclass(frozen=True)
class ChunkLog:
    level: int
    bitrate: float
    rebuffer: float
    qoe: float
    decision: Decision
    score: float


@dataclass
class EpisodeResult:
    total_qoe: float
    chunks: list
    default_step: Optional[int]
    seed: int
    trace_id: str
    policy: str = "agent"
    scheme: str = "none"
    mean_latency: float = 0.0
    states: list = field(default_factory=list)
    raw_scores: list = field(default_factory=list)

    @property
    def levels(self) -> list:
        return [c.level for c in self.chunks]

    @property
    def default_fraction(self) -> float:
        if not self.chunks:
            return 0.0
        return sum(c.decision is Decision.DEFAULT for c in self.chunks) / len(self.chunks)


def _check(policy: str, cfg: ControllerConfig, models: Safeguard, manifest: VideoManifest):
    if policy not in POLICIES:
        raise ConfigMismatch(f"unknown policy {policy!r}")
    if policy == "agent" and not models.agents:
        raise ConfigMismatch("the agent policy needs at least one trained agent")
    spec = models.feature_spec()
    if cfg.scheme == "ND" and models.detector is None:
        raise ConfigMismatch("ND scheme needs a fitted detector")
    # two members are discarded before scoring, so four is the smallest useful ensemble
    if cfg.scheme == "A" and len(models.agents) < MIN_ENSEMBLE:
        raise ConfigMismatch(f"agent-ensemble scheme needs at least {MIN_ENSEMBLE} agents")
    if cfg.scheme == "V" and len(models.values) < MIN_ENSEMBLE:
        raise ConfigMismatch(f"value-ensemble scheme needs at least {MIN_ENSEMBLE} value functions")
    for a in models.agents:
        if a.levels != manifest.levels:
            raise ConfigMismatch(f"agent has {a.levels} actions but the manifest has {manifest.levels} levels")
    return spec


def run_episode(policy: str, models: Safeguard, cfg: ControllerConfig, trace: Trace, manifest: VideoManifest,
                env_cfg: EnvConfig = EnvConfig(), seed: int = 0, start: float = 0.0,
                keep_states: bool = False, score_after_default: bool = False) -> EpisodeResult:
    """Stream the whole video once.

    Per chunk: featurise, let the acting policy propose a level, score the
    step under ``cfg.scheme``, ask the controller, then download either the
    proposal or the buffer-based choice.
    """
    spec = _check(policy, cfg, models, manifest)
    rng = np.random.default_rng(seed)
    rates = manifest.rates.tolist()
    ctrl = ControllerState.fresh(cfg)
    state: SessionState = initial_state(trace, start)
    chunks, states, raw = [], [], []
    latency = 0.0
    default_step = None
    for idx in range(manifest.chunk_count):
        t0 = time.perf_counter()
        f = featurize(state, manifest, spec) if spec is not None else None
        probs = None
        if policy == "agent":
            probs = actor_forward(models.agents[0], f)
            proposal = greedy(probs)
        elif policy == "bb":
            proposal = bb_decide(state.buffer, rates, models.reservoir, models.cushion)
        else:
            proposal = int(rng.integers(manifest.levels))
        score = math.nan
        decision = Decision.USE_LEARNED
        if cfg.scheme != "none":
            if ctrl.defaulted and cfg.sticky and not score_after_default:
                decision = Decision.DEFAULT
            elif cfg.scheme == "ND":
                x = nd_features(state.throughputs(), models.detector.k, models.detector.window)
                ood = False
                if x is not None:
                    score, ood = ocsvm_score(models.detector, x)
                decision = nd_update(ctrl, ood, cfg)
            else:
                if cfg.scheme == "A":
                    if probs is None:
                        probs = actor_forward(models.agents[0], f)
                    dists = [probs] + [actor_forward(a, f) for a in models.agents[1:]]
                    score = u_pi(dists, recompute_mean=models.recompute_mean).value
                else:
                    score = u_v([value_forward(v, f) for v in models.values],
                                recompute_mean=models.recompute_mean).value
                decision = ensemble_update(ctrl, score, cfg)
        action = proposal
        if decision is Decision.DEFAULT:
            action = bb_decide(state.buffer, rates, models.reservoir, models.cushion)
            if default_step is None:
                default_step = idx
        latency += time.perf_counter() - t0
        if keep_states:
            states.append(state)
        raw.append(score)
        out = step(state, action, trace, manifest, env_cfg)
        chunks.append(ChunkLog(action, out.bitrate, out.rebuffer_time, out.qoe, decision, score))
        state = out.next_state
    if keep_states:
        states.append(state)
    total = 0.0
    for c in chunks:
        total += c.qoe
    return EpisodeResult(total, chunks, default_step, seed, trace.id, policy, cfg.scheme,
                         latency / max(len(chunks), 1), states, raw)


def continue_with_bb(state: SessionState, trace: Trace, manifest: VideoManifest, env_cfg: EnvConfig,
                     reservoir: float = 5.0, cushion: float = 10.0) -> list:
    """Per-chunk QoE of finishing the session with the buffer-based policy from ``state``."""
    rates = manifest.rates.tolist()
    qoes = []
    while state.chunk_index < manifest.chunk_count:
        out = step(state, bb_decide(state.buffer, rates, reservoir, cushion), trace, manifest, env_cfg)
        qoes.append(out.qoe)
        state = out.next_state
    return qoes
