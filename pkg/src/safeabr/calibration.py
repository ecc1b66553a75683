"""Threshold calibration for the ensemble schemes.

The (alpha, l) pair of an ensemble scheme is searched so that its mean
in-distribution QoE on validation traces lands as close as possible to a
target, normally the QoE of the ND-safeguarded agent on the same traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .controller import ControllerConfig, first_default_step, rolling_variances
from .env import EnvConfig, VideoManifest
from .episode import Safeguard, continue_with_bb, run_episode
from .traces import Trace

CALIBRATION_FORMAT = "safeabr-calibration/1"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationGrid:
    quantiles: tuple = tuple(np.round(np.arange(0.0, 100.0 + 1e-9, 2.5), 6))
    l_values: tuple = (1, 2, 3, 4, 5)
    tolerance: float = 0.05


@dataclass
class CalibrationResult:
    scheme: str
    alpha: float
    l_consecutive: int
    achieved_in_dist_qoe: float
    target_qoe: float
    k_window: int = 5
    tolerance: float = 0.05
    search_log: list = field(default_factory=list)   # (quantile, alpha, l, mean_qoe)

    @property
    def gap(self) -> float:
        return abs(self.achieved_in_dist_qoe - self.target_qoe)

    @property
    def within_tolerance(self) -> bool:
        return self.gap <= self.tolerance * abs(self.target_qoe)

    def controller(self, sticky: bool = True) -> ControllerConfig:
        return ControllerConfig(self.scheme, self.k_window, self.l_consecutive, self.alpha, sticky)


def mean_qoe(policy: str, models: Safeguard, cfg: ControllerConfig, traces: Sequence[Trace],
             manifest: VideoManifest, env_cfg: EnvConfig) -> float:
    return float(np.mean([run_episode(policy, models, cfg, tr, manifest, env_cfg).total_qoe for tr in traces]))


def nd_target(models: Safeguard, traces: Sequence[Trace], manifest: VideoManifest, env_cfg: EnvConfig,
              l_consecutive: int = 3, sticky: bool = True) -> float:
    """Mean validation QoE of the agent under the fixed ND rule."""
    cfg = ControllerConfig("ND", l_consecutive=l_consecutive, sticky=sticky)
    return mean_qoe("agent", models, cfg, traces, manifest, env_cfg)


class _ReplayCache:
    """Replays sticky-default sessions from recorded vanilla trajectories.

    Before its first default a safeguarded session is step-for-step the
    vanilla session, so a candidate threshold only changes where the
    buffer-based tail starts.
    """

    def __init__(self, scheme, models, traces, manifest, env_cfg, k_window):
        self.traces, self.manifest, self.env_cfg, self.models = traces, manifest, env_cfg, models
        probe = ControllerConfig(scheme, k_window, 1, math.inf, True)
        self.runs = [run_episode("agent", models, probe, tr, manifest, env_cfg, keep_states=True) for tr in traces]
        self.variances = [rolling_variances(r.raw_scores, k_window) for r in self.runs]
        self._tails = {}

    def population(self) -> np.ndarray:
        pop = np.concatenate([v[~np.isnan(v)] for v in self.variances]) if self.variances else np.array([])
        return pop

    def episode_qoe(self, i: int, d: Optional[int]) -> float:
        run = self.runs[i]
        qoes = [c.qoe for c in run.chunks]
        if d is None:
            seq = qoes
        else:
            key = (i, d)
            if key not in self._tails:
                self._tails[key] = continue_with_bb(run.states[d], self.traces[i], self.manifest, self.env_cfg,
                                                    self.models.reservoir, self.models.cushion)
            seq = qoes[:d] + self._tails[key]
        total = 0.0
        for q in seq:
            total += q
        return total

    def mean_qoe(self, alpha: float, l: int) -> float:
        return float(np.mean([self.episode_qoe(i, first_default_step(v, alpha, l))
                              for i, v in enumerate(self.variances)]))


def calibrate(scheme: str, models: Safeguard, validation: Sequence[Trace], manifest: VideoManifest,
              target_qoe: float, env_cfg: EnvConfig = EnvConfig(), grid: CalibrationGrid = CalibrationGrid(),
              k_window: int = 5, sticky: bool = True) -> CalibrationResult:
    """Grid-search (alpha, l) to match ``target_qoe`` on the validation traces.

    Candidate alphas are quantiles of the windowed-variance population seen
    while the unguarded agent streams the validation traces.  Ties in the
    distance to the target go to the larger alpha, then the larger l.
    """
    if scheme not in ("A", "V"):
        raise CalibrationError("only the ensemble schemes are calibrated")
    if not validation:
        raise CalibrationError("no validation traces")
    cache = _ReplayCache(scheme, models, validation, manifest, env_cfg, k_window)
    pop = cache.population()
    if pop.size == 0:
        raise CalibrationError("empty score population (episodes shorter than the window?)")
    candidates = []
    for q in grid.quantiles:
        alpha = float(np.percentile(pop, q))
        for l in grid.l_values:
            if sticky:
                qoe = cache.mean_qoe(alpha, l)
            else:
                cfg = ControllerConfig(scheme, k_window, l, alpha, sticky=False)
                qoe = mean_qoe("agent", models, cfg, validation, manifest, env_cfg)
            candidates.append((float(q), alpha, int(l), qoe))
    best = min(candidates, key=lambda c: (abs(c[3] - target_qoe), -c[1], -c[2]))
    return CalibrationResult(scheme, best[1], best[2], best[3], float(target_qoe), k_window, grid.tolerance,
                             candidates)


def save_calibration(result: CalibrationResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {CALIBRATION_FORMAT}\n")
        fh.write(f"scheme {result.scheme}\n")
        fh.write(f"alpha {float(result.alpha)!r}\n")
        fh.write(f"l_consecutive {result.l_consecutive}\n")
        fh.write(f"k_window {result.k_window}\n")
        fh.write(f"target_qoe {float(result.target_qoe)!r}\n")
        fh.write(f"achieved_qoe {float(result.achieved_in_dist_qoe)!r}\n")
        fh.write(f"gap {float(result.gap)!r}\n")
        fh.write(f"tolerance {float(result.tolerance)!r}\n")
        fh.write(f"within_tolerance {'yes' if result.within_tolerance else 'no'}\n")
        fh.write("# grid rows: quantile alpha l mean_qoe\n")
        for q, a, l, qoe in result.search_log:
            fh.write(f"grid {float(q)!r} {float(a)!r} {l} {float(qoe)!r}\n")


def load_calibration(path) -> CalibrationResult:
    head, log = {}, []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != f"# {CALIBRATION_FORMAT}":
        raise CalibrationError(f"{path}: not a calibration report")
    for ln in lines[1:]:
        if ln.startswith("#"):
            continue
        key, _, rest = ln.partition(" ")
        if key == "grid":
            q, a, l, qoe = rest.split()
            log.append((float(q), float(a), int(l), float(qoe)))
        else:
            head[key] = rest
    try:
        return CalibrationResult(head["scheme"], float(head["alpha"]), int(head["l_consecutive"]),
                                 float(head["achieved_qoe"]), float(head["target_qoe"]), int(head["k_window"]),
                                 float(head["tolerance"]), log)
    except (KeyError, ValueError) as exc:
        raise CalibrationError(f"{path}: malformed report ({exc})") from None
