import math

import numpy as np
import pytest

from safeabr import policies as pol
from safeabr.calibration import (CalibrationError, CalibrationGrid, _ReplayCache, calibrate, load_calibration,
                                 mean_qoe, nd_target, save_calibration)
from safeabr.controller import ControllerConfig, Decision
from safeabr.env import EnvConfig, episode_qoe, initial_state, step
from safeabr.episode import ConfigMismatch, Safeguard, run_episode
from safeabr.policies import bb_decide
from safeabr.uncertainty import fit_ocsvm, nd_training_samples


@pytest.fixture(scope="module")
def models(short_manifest, gamma_traces):
    hyper = pol.AgentTrainConfig(episodes=30, hidden=(8, 8))
    agents = pol.train_ensemble("agents", 5, seeds=[1, 2, 3, 4, 5], train_traces=gamma_traces[:8],
                                manifest=short_manifest, agent_hyper=hyper)
    values = pol.train_ensemble("values", 5, seeds=[6, 7, 8, 9, 10], train_traces=gamma_traces[:8], manifest=short_manifest,
                                value_hyper=pol.ValueTrainConfig(hidden=(8, 8), epochs=3), policy=agents[0])
    hist = [pol.rollout(t, short_manifest, EnvConfig(), pol.bb_chooser(short_manifest), keep_states=True)
            .states[-1].throughputs() for t in gamma_traces[:8]]
    det = fit_ocsvm(nd_training_samples(hist, 2, window=3), nu=0.3, k=2, window=3)
    return Safeguard(agents, values, det)


def bb_levels(res, trace, manifest, start=0.0):
    state = initial_state(trace, start)
    out = []
    for c in res.chunks:
        out.append(bb_decide(state.buffer, manifest.rates.tolist()))
        state = step(state, c.level, trace, manifest).next_state
    return out


def test_bb_identity(models, short_manifest, gamma_traces):
    tr = gamma_traces[9]
    res = run_episode("bb", models, ControllerConfig(), tr, short_manifest)
    ro = pol.rollout(tr, short_manifest, EnvConfig(), pol.bb_chooser(short_manifest))
    assert res.total_qoe == pytest.approx(float(ro.rewards.sum()), abs=1e-9)
    assert res.levels == ro.actions.tolist()


def test_total_is_sum(models, short_manifest, gamma_traces):
    for scheme in ("none", "ND", "A", "V"):
        cfg = ControllerConfig(scheme, alpha=0.0 if scheme in "AV" else math.inf)
        res = run_episode("agent", models, cfg, gamma_traces[10], short_manifest, seed=3)
        assert abs(res.total_qoe - episode_qoe([c.bitrate for c in res.chunks],
                                               [c.rebuffer for c in res.chunks], 4.3)) < 1e-9
        assert (res.default_step is not None) == any(c.decision is Decision.DEFAULT for c in res.chunks)


def test_alpha_inf_is_vanilla(models, short_manifest, gamma_traces):
    van = run_episode("agent", models, ControllerConfig(), gamma_traces[9], short_manifest)
    for s in ("A", "V"):
        res = run_episode("agent", models, ControllerConfig(s, alpha=math.inf, l_consecutive=1), gamma_traces[9],
                          short_manifest)
        assert res.total_qoe == van.total_qoe and res.default_step is None


def test_alpha_zero_defaults_after_warmup(models, short_manifest, gamma_traces):
    tr = gamma_traces[11]
    res = run_episode("agent", models, ControllerConfig("V", k_window=5, alpha=0.0, l_consecutive=1), tr,
                      short_manifest)
    assert res.default_step == 4
    assert res.levels[4:] == bb_levels(res, tr, short_manifest)[4:]


def test_random_deterministic(models, short_manifest, gamma_traces):
    a = run_episode("random", models, ControllerConfig(), gamma_traces[0], short_manifest, seed=5)
    b = run_episode("random", models, ControllerConfig(), gamma_traces[0], short_manifest, seed=5)
    assert a.levels == b.levels and a.total_qoe == b.total_qoe


def test_mismatch(models, short_manifest, gamma_traces):
    bad = Safeguard(models.agents[:3], models.values)
    with pytest.raises(ConfigMismatch):
        run_episode("agent", bad, ControllerConfig("A", alpha=1.0), gamma_traces[0], short_manifest)
    with pytest.raises(ConfigMismatch):
        run_episode("agent", Safeguard(models.agents), ControllerConfig("ND"), gamma_traces[0], short_manifest)
    other = pol.new_agent(pol.FeatureSpec(3).size, 6, feature_spec=pol.FeatureSpec(3))
    with pytest.raises(ConfigMismatch):
        run_episode("agent", Safeguard([other] + models.agents[1:]), ControllerConfig(), gamma_traces[0],
                    short_manifest)


@pytest.mark.parametrize("scheme", ["A", "V"])
def test_replay_matches_simulation(models, short_manifest, gamma_traces, scheme):
    val = gamma_traces[8:12]
    cache = _ReplayCache(scheme, models, val, short_manifest, EnvConfig(), 5)
    pop = cache.population()
    for q in (0, 30, 60, 90, 100):
        alpha = float(np.percentile(pop, q))
        for l in (1, 3):
            direct = mean_qoe("agent", models, ControllerConfig(scheme, 5, l, alpha), val, short_manifest,
                              EnvConfig())
            assert abs(cache.mean_qoe(alpha, l) - direct) < 1e-9


def test_calibrate(models, short_manifest, gamma_traces, tmp_path):
    val = gamma_traces[8:12]
    target = nd_target(models, val, short_manifest, EnvConfig())
    res = calibrate("V", models, val, short_manifest, target, grid=CalibrationGrid(tuple(np.arange(0, 101, 10.0))))
    best = min(abs(r[3] - target) for r in res.search_log)
    assert res.gap == pytest.approx(best)
    assert len(res.search_log) == 11 * 5
    save_calibration(res, tmp_path / "c.txt")
    back = load_calibration(tmp_path / "c.txt")
    assert (back.alpha, back.l_consecutive, back.search_log) == (res.alpha, res.l_consecutive, res.search_log)
    loose = calibrate("V", models, val, short_manifest, target, grid=CalibrationGrid((50.0,), (2,)), sticky=False)
    assert loose.search_log[0][3] == mean_qoe("agent", models, loose.controller(False), val, short_manifest,
                                              EnvConfig())
    with pytest.raises(CalibrationError):
        calibrate("ND", models, val, short_manifest, target)
