"""Train x test evaluation matrix.

For every training distribution the harness trains an agent ensemble, a
value ensemble for the acting agent, and a novelty detector, then calibrates
the ensemble thresholds against the ND scheme.  Every (train, test) cell is
then scored for six arms: the unguarded agent, the three safeguarded variants,
buffer-based and random.  Scores are normalised per cell so that Random is 0
and BB is 1.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import policies as pol
from .calibration import (CalibrationGrid, calibrate, load_calibration, nd_target,
                          save_calibration)
from .controller import ControllerConfig
from .env import EnvConfig, VideoManifest, load_manifest, synth_manifest
from .episode import MIN_ENSEMBLE, Safeguard, run_episode
from .traces import DatasetSplit, generate_dataset, parse_distribution, split_dataset
from .uncertainty import fit_ocsvm, load_ocsvm, nd_training_samples, save_ocsvm

log = logging.getLogger(__name__)

ARMS = ("vanilla", "ND", "A", "V", "BB", "Random")
SAFEGUARDED = ("ND", "A", "V")


class ExperimentError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    seed: int = 0
    distributions: dict = field(default_factory=dict)     # name -> DistributionSpec
    train_dists: list = field(default_factory=list)
    test_dists: list = field(default_factory=list)
    traces_per_dist: int = 170
    trace_steps: int = 1200
    trace_dt: float = 1.0
    train_fraction: float = 0.7
    validation_fraction: float = 0.3
    episodes_per_cell: int = 50
    ensemble_size: int = 5
    arms: tuple = ARMS
    jobs: int = 1
    # video
    rates: tuple = (0.3, 0.75, 1.2, 1.85, 2.85, 4.3)
    chunk_count: int = 48
    repeats: int = 5
    chunk_duration: float = 4.0
    size_noise_sigma: float = 0.1
    manifest_path: Optional[str] = None
    env: EnvConfig = EnvConfig()
    reservoir: float = 5.0
    cushion: float = 10.0
    agent: pol.AgentTrainConfig = pol.AgentTrainConfig()
    value: pol.ValueTrainConfig = pol.ValueTrainConfig()
    # novelty detection
    nd_k_synthetic: int = 30
    nd_k_empirical: int = 5
    nd_window: int = 10
    nd_l: int = 3
    nd_nu: float = 0.1
    nd_gamma: Optional[float] = None
    nd_max_samples: int = 1000
    nd_stride: int = 1
    # ensembles and calibration
    k_window: int = 5
    sticky: bool = True
    recompute_mean: bool = True
    grid: CalibrationGrid = CalibrationGrid()

    def nd_k(self, dist: str) -> int:
        return self.nd_k_synthetic if self.distributions[dist].synthetic else self.nd_k_empirical


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def load_config(path) -> ExperimentConfig:
    """Read an INI-style experiment file (``[section]`` headers, ``key = value``)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path, encoding="utf-8")
    if not read:
        raise ExperimentError(f"cannot read config {path}")
    return config_from_parser(cp, base_dir=Path(path).resolve().parent)


def config_from_parser(cp: configparser.ConfigParser, base_dir: Path = Path(".")) -> ExperimentConfig:
    cfg = ExperimentConfig()
    try:
        dists = {}
        for section in cp.sections():
            if section.lower().startswith("dist "):
                name = section[5:].strip()
                spec = parse_distribution(cp[section]["spec"])
                if spec.kind == "file" and not os.path.isabs(spec.path):
                    spec = replace(spec, path=str(base_dir / spec.path))
                dists[name] = spec
        if not dists:
            raise ExperimentError("config defines no [dist NAME] sections")
        cfg.distributions = dists
        ex = cp["experiment"] if cp.has_section("experiment") else {}
        cfg.seed = int(ex.get("seed", cfg.seed))
        cfg.train_dists = ex.get("train", "").split() or list(dists)
        cfg.test_dists = ex.get("test", "").split() or list(dists)
        for name in cfg.train_dists + cfg.test_dists:
            if name not in dists:
                raise ExperimentError(f"unknown distribution {name!r}")
        cfg.traces_per_dist = int(ex.get("traces_per_dist", cfg.traces_per_dist))
        cfg.trace_steps = int(ex.get("trace_steps", cfg.trace_steps))
        cfg.trace_dt = float(ex.get("trace_dt", cfg.trace_dt))
        cfg.train_fraction = float(ex.get("train_fraction", cfg.train_fraction))
        cfg.validation_fraction = float(ex.get("validation_fraction", cfg.validation_fraction))
        cfg.episodes_per_cell = int(ex.get("episodes_per_cell", cfg.episodes_per_cell))
        cfg.ensemble_size = int(ex.get("ensemble_size", cfg.ensemble_size))
        cfg.jobs = int(ex.get("jobs", cfg.jobs))
        if "arms" in ex:
            cfg.arms = tuple(ex["arms"].split())
            unknown = set(cfg.arms) - set(ARMS)
            if unknown:
                raise ExperimentError(f"unknown arms {sorted(unknown)}")
        if cfg.ensemble_size < MIN_ENSEMBLE:
            raise ExperimentError(f"ensemble_size must be at least {MIN_ENSEMBLE}")

        if cp.has_section("video"):
            v = cp["video"]
            cfg.rates = _floats(v.get("rates", " ".join(map(str, cfg.rates))))
            cfg.chunk_count = v.getint("chunk_count", cfg.chunk_count)
            cfg.repeats = v.getint("repeats", cfg.repeats)
            cfg.chunk_duration = v.getfloat("chunk_duration", cfg.chunk_duration)
            cfg.size_noise_sigma = v.getfloat("size_noise_sigma", cfg.size_noise_sigma)
            mp = v.get("manifest", "").strip()
            cfg.manifest_path = str(base_dir / mp) if mp and not os.path.isabs(mp) else (mp or None)
        if cp.has_section("env"):
            e = cp["env"]
            cfg.env = EnvConfig(e.getfloat("rtt", cfg.env.rtt), e.getfloat("rebuffer_penalty", cfg.env.rebuffer_penalty),
                                e.getfloat("buffer_cap", cfg.env.buffer_cap), e.getfloat("rate_floor", cfg.env.rate_floor))
        if cp.has_section("bb"):
            cfg.reservoir = cp["bb"].getfloat("reservoir", cfg.reservoir)
            cfg.cushion = cp["bb"].getfloat("cushion", cfg.cushion)
        if cp.has_section("agent"):
            a = cp["agent"]
            d = cfg.agent
            cfg.agent = pol.AgentTrainConfig(
                hidden=_ints(a.get("hidden", " ".join(map(str, d.hidden)))),
                episodes=a.getint("episodes", d.episodes), actor_lr=a.getfloat("actor_lr", d.actor_lr),
                critic_lr=a.getfloat("critic_lr", d.critic_lr), gamma=a.getfloat("gamma", d.gamma),
                gae_lambda=a.getfloat("gae_lambda", d.gae_lambda),
                entropy_weight=a.getfloat("entropy_weight", d.entropy_weight),
                entropy_final=a.getfloat("entropy_final", d.entropy_final),
                reward_scale=a.getfloat("reward_scale", d.reward_scale), history=a.getint("history", d.history))
        if cp.has_section("value"):
            v = cp["value"]
            d = cfg.value
            cfg.value = pol.ValueTrainConfig(
                hidden=_ints(v.get("hidden", " ".join(map(str, d.hidden)))), gamma=v.getfloat("gamma", d.gamma),
                epochs=v.getint("epochs", d.epochs), batch_size=v.getint("batch_size", d.batch_size),
                lr=v.getfloat("lr", d.lr), rollouts_per_trace=v.getint("rollouts_per_trace", d.rollouts_per_trace))
        if cp.has_section("nd"):
            n = cp["nd"]
            cfg.nd_k_synthetic = n.getint("k_synthetic", cfg.nd_k_synthetic)
            cfg.nd_k_empirical = n.getint("k_empirical", cfg.nd_k_empirical)
            cfg.nd_window = n.getint("window", cfg.nd_window)
            cfg.nd_l = n.getint("l_consecutive", cfg.nd_l)
            cfg.nd_nu = n.getfloat("nu", cfg.nd_nu)
            g = n.get("gamma", "").strip()
            cfg.nd_gamma = float(g) if g else None
            cfg.nd_max_samples = n.getint("max_samples", cfg.nd_max_samples)
            cfg.nd_stride = n.getint("stride", cfg.nd_stride)
        if cp.has_section("ensemble"):
            cfg.k_window = cp["ensemble"].getint("k_window", cfg.k_window)
            cfg.sticky = cp["ensemble"].getboolean("sticky", cfg.sticky)
            cfg.recompute_mean = cp["ensemble"].getboolean("recompute_mean", cfg.recompute_mean)
        if cp.has_section("calibration"):
            c = cp["calibration"]
            step = c.getfloat("quantile_step", 2.5)
            lo = c.getfloat("quantile_min", 0.0)
            qs = tuple(np.round(np.arange(lo, 100.0 + 1e-9, step), 6))
            cfg.grid = CalibrationGrid(qs, _ints(c.get("l_values", "1 2 3 4 5")),
                                       c.getfloat("tolerance", cfg.grid.tolerance))
    except (ValueError, KeyError) as exc:
        raise ExperimentError(f"bad config: {exc}") from None
    return cfg


# --------------------------------------------------------------------------
# seeded streams
# --------------------------------------------------------------------------

def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(master: int, *parts) -> int:
    """Independent 32-bit seed for a named sub-stream of the master seed.

    Streams are keyed by content (names and counters), not by call order, so
    adding arms or cells never perturbs existing ones.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(p) for p in parts))
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

def build_manifest(cfg: ExperimentConfig) -> VideoManifest:
    if cfg.manifest_path:
        return load_manifest(cfg.manifest_path)
    return synth_manifest(cfg.rates, cfg.chunk_count, cfg.repeats, cfg.chunk_duration, cfg.size_noise_sigma,
                          derive_seed(cfg.seed, "manifest"))


def dataset(cfg: ExperimentConfig, dist: str) -> DatasetSplit:
    spec = cfg.distributions[dist]
    traces = generate_dataset(spec, cfg.traces_per_dist, cfg.trace_steps, cfg.trace_dt,
                              derive_seed(cfg.seed, "traces", dist), prefix=dist)
    return split_dataset(traces, cfg.train_fraction, cfg.validation_fraction, derive_seed(cfg.seed, "split", dist))


# --------------------------------------------------------------------------
# per-training-distribution artifacts
# --------------------------------------------------------------------------

@dataclass
class TrainedStack:
    dist: str
    safeguard: Safeguard
    calibrations: dict          # scheme -> CalibrationResult
    nd_l: int = 3

    def controller(self, arm: str, cfg: ExperimentConfig) -> ControllerConfig:
        if arm == "ND":
            return ControllerConfig("ND", cfg.k_window, self.nd_l, math.inf, cfg.sticky)
        if arm in ("A", "V"):
            return self.calibrations[arm].controller(cfg.sticky)
        return ControllerConfig()


def fit_detector(cfg: ExperimentConfig, dist: str, split: DatasetSplit, manifest: VideoManifest):
    """OC-SVM over (mean, std) windows of buffer-based sessions on the training traces."""
    choose = pol.bb_chooser(manifest, cfg.reservoir, cfg.cushion)
    histories = [pol.rollout(tr, manifest, cfg.env, choose, keep_states=True).states[-1].throughputs()
                 for tr in split.train]
    k = cfg.nd_k(dist)
    X = nd_training_samples(histories, k, cfg.nd_window, cfg.nd_stride)
    if X.shape[0] > cfg.nd_max_samples:
        rng = np.random.default_rng(derive_seed(cfg.seed, "nd-subsample", dist))
        X = X[np.sort(rng.choice(X.shape[0], cfg.nd_max_samples, replace=False))]
    return fit_ocsvm(X, cfg.nd_nu, cfg.nd_gamma, k=k, window=cfg.nd_window)


def agent_seeds(cfg: ExperimentConfig, dist: str) -> list:
    return [derive_seed(cfg.seed, "agent-init", dist, i) for i in range(cfg.ensemble_size)]


def value_seeds(cfg: ExperimentConfig, dist: str) -> list:
    return [derive_seed(cfg.seed, "value-init", dist, i) for i in range(cfg.ensemble_size)]


def train_stack(cfg: ExperimentConfig, dist: str, manifest: VideoManifest) -> TrainedStack:
    split = dataset(cfg, dist)
    agent_hyper = replace(cfg.agent, data_seed=derive_seed(cfg.seed, "agent-data", dist))
    value_hyper = replace(cfg.value, data_seed=derive_seed(cfg.seed, "value-data", dist))
    log.info("[%s] training %d agents", dist, cfg.ensemble_size)
    agents = pol.train_ensemble("agents", cfg.ensemble_size, seeds=agent_seeds(cfg, dist), train_traces=split.train,
                                manifest=manifest, env_cfg=cfg.env, agent_hyper=agent_hyper)
    log.info("[%s] training %d value functions", dist, cfg.ensemble_size)
    values = pol.train_ensemble("values", cfg.ensemble_size, seeds=value_seeds(cfg, dist), train_traces=split.train,
                                manifest=manifest, env_cfg=cfg.env, value_hyper=value_hyper, policy=agents[0])
    log.info("[%s] fitting novelty detector", dist)
    detector = fit_detector(cfg, dist, split, manifest)
    sg = Safeguard(agents, values, detector, cfg.reservoir, cfg.cushion, cfg.recompute_mean)
    return TrainedStack(dist, sg, calibrate_stack(cfg, sg, split, manifest), cfg.nd_l)


def calibrate_stack(cfg: ExperimentConfig, sg: Safeguard, split: DatasetSplit, manifest: VideoManifest) -> dict:
    target = nd_target(sg, split.validation, manifest, cfg.env, cfg.nd_l, cfg.sticky)
    return {s: calibrate(s, sg, split.validation, manifest, target, cfg.env, cfg.grid, cfg.k_window, cfg.sticky)
            for s in ("A", "V")}


def save_stack(stack: TrainedStack, root) -> None:
    d = Path(root) / stack.dist
    d.mkdir(parents=True, exist_ok=True)
    for i, a in enumerate(stack.safeguard.agents):
        pol.save_agent(a, d / f"agent-{i}.npz")
    for i, v in enumerate(stack.safeguard.values):
        pol.save_value(v, d / f"value-{i}.npz")
    save_ocsvm(stack.safeguard.detector, d / "nd.txt")
    for s, c in stack.calibrations.items():
        save_calibration(c, d / f"calibration-{s}.txt")


def load_stack(cfg: ExperimentConfig, dist: str, root) -> TrainedStack:
    d = Path(root) / dist
    try:
        agents = [pol.load_agent(d / f"agent-{i}.npz") for i in range(cfg.ensemble_size)]
        values = [pol.load_value(d / f"value-{i}.npz") for i in range(cfg.ensemble_size)]
        detector = load_ocsvm(d / "nd.txt")
        cals = {s: load_calibration(d / f"calibration-{s}.txt") for s in ("A", "V")}
    except FileNotFoundError as exc:
        raise ExperimentError(f"missing artifact for {dist!r}: {exc.filename}") from None
    return TrainedStack(dist, Safeguard(agents, values, detector, cfg.reservoir, cfg.cushion, cfg.recompute_mean),
                        cals, cfg.nd_l)


def stack_available(cfg: ExperimentConfig, dist: str, root) -> bool:
    d = Path(root) / dist
    need = ([f"agent-{i}.npz" for i in range(cfg.ensemble_size)]
            + [f"value-{i}.npz" for i in range(cfg.ensemble_size)]
            + ["nd.txt", "calibration-A.txt", "calibration-V.txt"])
    return all((d / n).is_file() for n in need)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRecord:
    train: str
    test: str
    arm: str
    trace: str
    seed: int
    total_qoe: float
    default_step: Optional[int]
    default_fraction: float
    chunks: int


def evaluate_arm(cfg: ExperimentConfig, stack: TrainedStack, test: str, arm: str, traces, manifest) -> list:
    policy = {"BB": "bb", "Random": "random"}.get(arm, "agent")
    ctrl = stack.controller(arm, cfg)
    out = []
    for idx, tr in enumerate(traces):
        seed = derive_seed(cfg.seed, "episode", stack.dist, test, arm, idx, 0)
        res = run_episode(policy, stack.safeguard, ctrl, tr, manifest, cfg.env, seed)
        out.append(EpisodeRecord(stack.dist, test, arm, tr.id, seed, res.total_qoe, res.default_step,
                                 res.default_fraction, len(res.chunks)))
    return out


def normalize(qoe: float, random_qoe: float, bb_qoe: float) -> float:
    """Affine rescale with Random at 0 and BB at 1; NaN when the two coincide."""
    denom = bb_qoe - random_qoe
    if abs(denom) < 1e-9:
        return math.nan
    return (qoe - random_qoe) / denom


@dataclass(frozen=True)
class CellSummary:
    train: str
    test: str
    arm: str
    mean_qoe: float
    normalized: float
    default_rate: float
    episodes: int


@dataclass
class MatrixReport:
    episodes: list
    cells: list
    arm_stats: list        # (arm, n_cells, min, max, mean, median) over OOD cells
    cdf: list              # (arm, value, cdf)


def summarize(records: Sequence[EpisodeRecord]) -> MatrixReport:
    """Aggregate per-episode records into cell, per-arm and CDF tables."""
    groups = {}
    for r in records:
        groups.setdefault((r.train, r.test, r.arm), []).append(r)
    cells = []
    pairs = sorted({(tr, te) for tr, te, _ in groups})
    arms_present = [a for a in ARMS if any(k[2] == a for k in groups)]
    for tr, te in pairs:
        means = {a: float(np.mean([r.total_qoe for r in groups[(tr, te, a)]]))
                 for a in arms_present if (tr, te, a) in groups}
        rnd, bb = means.get("Random"), means.get("BB")
        for a in arms_present:
            if (tr, te, a) not in groups:
                continue
            eps = groups[(tr, te, a)]
            if a == "BB":
                norm = 1.0 if rnd is not None and abs(bb - rnd) >= 1e-9 else math.nan
            elif a == "Random":
                norm = 0.0 if bb is not None and abs(bb - rnd) >= 1e-9 else math.nan
            else:
                norm = normalize(means[a], rnd, bb) if rnd is not None and bb is not None else math.nan
            cells.append(CellSummary(tr, te, a, means[a], norm,
                                     float(np.mean([r.default_fraction for r in eps])), len(eps)))
    stats, cdf = [], []
    for a in arms_present:
        vals = sorted(c.normalized for c in cells
                      if c.arm == a and c.train != c.test and not math.isnan(c.normalized))
        if vals:
            stats.append((a, len(vals), vals[0], vals[-1], float(np.mean(vals)), float(np.median(vals))))
            n = len(vals)
            cdf.extend((a, v, (i + 1) / n) for i, v in enumerate(vals))
        else:
            stats.append((a, 0, math.nan, math.nan, math.nan, math.nan))
    return MatrixReport(list(records), cells, stats, cdf)


def run_matrix(cfg: ExperimentConfig, artifacts=None, train: bool = True, train_filter: Optional[Sequence[str]] = None,
               test_filter: Optional[Sequence[str]] = None, arm_filter: Optional[Sequence[str]] = None) -> MatrixReport:
    """Evaluate every (train, test) cell, training missing artifacts when ``train`` is set."""
    manifest = build_manifest(cfg)
    trains = [d for d in cfg.train_dists if not train_filter or d in train_filter]
    tests = [d for d in cfg.test_dists if not test_filter or d in test_filter]
    arms = [a for a in cfg.arms if not arm_filter or a in arm_filter]
    if not trains or not tests or not arms:
        raise ExperimentError("nothing to run after filtering distributions / arms")
    stacks = {}
    for d in trains:
        if artifacts is not None and stack_available(cfg, d, artifacts):
            stacks[d] = load_stack(cfg, d, artifacts)
        elif train:
            stacks[d] = train_stack(cfg, d, manifest)
            if artifacts is not None:
                save_stack(stacks[d], artifacts)
        else:
            raise ExperimentError(f"no trained artifacts for {d!r} (pass --train to build them)")
    test_sets = {}
    for d in tests:
        test_sets[d] = dataset(cfg, d).test[:cfg.episodes_per_cell]
    jobs = [(tr, te, arm) for tr in trains for te in tests for arm in arms]
    if cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(cfg.jobs) as ex:
            futures = [ex.submit(evaluate_arm, cfg, stacks[tr], te, arm, test_sets[te], manifest)
                       for tr, te, arm in jobs]
            records = [r for f in futures for r in f.result()]
    else:
        records = []
        for tr, te, arm in jobs:
            log.info("evaluating train=%s test=%s arm=%s", tr, te, arm)
            records.extend(evaluate_arm(cfg, stacks[tr], te, arm, test_sets[te], manifest))
    return summarize(records)


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------

EPISODE_COLUMNS = ("train", "test", "arm", "trace", "seed", "total_qoe", "default_step", "default_fraction", "chunks")
CELL_COLUMNS = ("train", "test", "arm", "mean_qoe", "normalized", "default_rate", "episodes")
ARM_COLUMNS = ("arm", "ood_cells", "min", "max", "mean", "median")
CDF_COLUMNS = ("arm", "normalized", "cdf")

_HEADERS = {
    "episodes.csv": [
        "one row per streamed session",
        "train/test: distribution names; arm: vanilla|ND|A|V|BB|Random",
        "total_qoe: sum of per-chunk QoE; default_step: first chunk served by BB after a default (empty if none)",
        "default_fraction: share of chunks decided by the default policy; chunks: session length",
    ],
    "cells.csv": [
        "one row per (train, test, arm) cell",
        "mean_qoe: mean total_qoe over the cell's episodes",
        "normalized: (mean_qoe - Random) / (BB - Random) within the cell, nan if BB == Random",
        "default_rate: mean default_fraction over the cell's episodes",
    ],
    "arms.csv": [
        "normalized-score statistics per arm over out-of-distribution cells (train != test)",
    ],
    "cdf.csv": [
        "empirical CDF of per-cell normalized scores over out-of-distribution cells, per arm",
    ],
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    for line in _HEADERS[path.name]:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def emit_report(report: MatrixReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "episodes.csv", EPISODE_COLUMNS,
               [(r.train, r.test, r.arm, r.trace, r.seed, float(r.total_qoe), r.default_step,
                 float(r.default_fraction), r.chunks) for r in report.episodes])
    _write_csv(out / "cells.csv", CELL_COLUMNS,
               [(c.train, c.test, c.arm, c.mean_qoe, c.normalized, c.default_rate, c.episodes) for c in report.cells])
    _write_csv(out / "arms.csv", ARM_COLUMNS, [(a, n, float(lo), float(hi), float(mu), float(md))
                                               for a, n, lo, hi, mu, md in report.arm_stats])
    _write_csv(out / "cdf.csv", CDF_COLUMNS, [(a, float(v), float(c)) for a, v, c in report.cdf])
    return [out / n for n in ("episodes.csv", "cells.csv", "arms.csv", "cdf.csv")]


def _read_rows(path: Path) -> list:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def read_episodes(path) -> list:
    rows = _read_rows(Path(path))
    return [EpisodeRecord(r["train"], r["test"], r["arm"], r["trace"], int(r["seed"]), float(r["total_qoe"]),
                          int(r["default_step"]) if r["default_step"] else None, float(r["default_fraction"]),
                          int(r["chunks"])) for r in rows]


def read_cells(path) -> list:
    return [CellSummary(r["train"], r["test"], r["arm"], float(r["mean_qoe"]), float(r["normalized"]),
                        float(r["default_rate"]), int(r["episodes"])) for r in _read_rows(Path(path))]


def read_cdf(path) -> list:
    return [(r["arm"], float(r["normalized"]), float(r["cdf"])) for r in _read_rows(Path(path))]


def report_from_dir(in_dir) -> MatrixReport:
    """Rebuild every summary table from ``episodes.csv`` alone."""
    path = Path(in_dir) / "episodes.csv"
    if not path.is_file():
        raise ExperimentError(f"{path} not found")
    return summarize(read_episodes(path))
