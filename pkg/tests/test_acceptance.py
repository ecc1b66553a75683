"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line; the lines are printed together at the
end of the session (see conftest.py).  Run standalone with

    python3 tests/test_acceptance.py
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from safeabr import experiment as ex
from safeabr import policies as pol
from safeabr.controller import ControllerConfig, window_variance
from safeabr.env import episode_qoe, synth_manifest
from safeabr.episode import Safeguard, run_episode
from safeabr.traces import generate_dataset, parse_distribution
from safeabr.uncertainty import fit_ocsvm, kl, nd_training_samples, u_pi, u_v

ROOT = Path(__file__).resolve().parents[1]
RESULTS = []

TRAIN = {"g22": "gamma:shape=2,scale=2", "g12": "gamma:shape=1,scale=2", "logi": "logistic:loc=4,scale=0.5"}
TEST = {**TRAIN, "exp": "exponential:scale=1"}


def record(n, ok, detail, started):
    RESULTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f}s) {detail}")
    return ok


def _cfg():
    cfg = ex.ExperimentConfig()
    cfg.seed = 11
    cfg.distributions = {k: parse_distribution(v) for k, v in TEST.items()}
    cfg.train_dists, cfg.test_dists = list(TRAIN), list(TEST)
    cfg.traces_per_dist, cfg.trace_steps = 100, 1000
    cfg.episodes_per_cell = 30
    return cfg


@pytest.fixture(scope="session")
def study():
    """Trained stacks for three synthetic training distributions plus their evaluation cells."""
    t0 = time.perf_counter()
    cfg = _cfg()
    manifest = ex.build_manifest(cfg)
    stacks = {d: ex.train_stack(cfg, d, manifest) for d in cfg.train_dists}
    tests = {d: ex.dataset(cfg, d).test[:cfg.episodes_per_cell] for d in cfg.test_dists}
    records = [r for tr in stacks for te in tests for arm in ex.ARMS
               for r in ex.evaluate_arm(cfg, stacks[tr], te, arm, tests[te], manifest)]
    report = ex.summarize(records)
    cells = {(c.train, c.test, c.arm): c for c in report.cells}
    return {"cfg": cfg, "manifest": manifest, "stacks": stacks, "tests": tests, "cells": cells,
            "seconds": time.perf_counter() - t0}


def test_c1_qoe_oracle():
    t0 = time.perf_counter()
    manifest = synth_manifest(seed=1)
    rng = np.random.default_rng(1)
    kinds = list(TEST.values())
    agent = pol.new_agent(pol.FeatureSpec().size, 6, init_seed=2)
    sg = Safeguard([agent])
    worst = 0.0
    for i in range(100):
        tr = generate_dataset(parse_distribution(kinds[i % 4]), 1, 600, seed=int(rng.integers(2**31)))[0]
        policy = ("random", "bb", "agent")[i % 3]
        res = run_episode(policy, sg, ControllerConfig(), tr, manifest, seed=i, start=float(rng.uniform(0, 600)))
        oracle = episode_qoe([c.bitrate for c in res.chunks], [c.rebuffer for c in res.chunks], 4.3)
        worst = max(worst, abs(res.total_qoe - oracle))
    assert record(1, worst < 1e-9, f"max |total - oracle| = {worst:.2e} over 100 episodes", t0)


def test_c2_hand_oracles():
    t0 = time.perf_counter()
    k = kl([0.5, 0.5], [0.25, 0.75])
    v = u_v([0, 1, 2, 100, -100]).value
    p = u_pi([[0.1, 0.2, 0.7]] * 5).value
    var = window_variance([0, 0, 0, 0, 5])
    ok = abs(k - 0.14384) <= 1e-5 and v == 2.0 and p == 0.0 and var == 4.0
    assert record(2, ok, f"kl={k:.6f} u_v={v} u_pi={p} var={var}", t0)


def test_c3_nu_property():
    t0 = time.perf_counter()
    X = np.random.default_rng(0).standard_normal((500, 2))
    parts, ok = [], True
    for nu in (0.05, 0.1):
        m = fit_ocsvm(X, nu=nu)
        frac = float(np.mean(m.decision(X) < 0))
        C = 1 / (nu * 500)
        feas = max(abs(m.alphas.sum() - 1), max(0.0, -m.alphas.min()), max(0.0, m.alphas.max() - C))
        ok &= frac <= nu + 0.05 and feas <= 1e-6
        parts.append(f"nu={nu}: outliers={frac:.3f} feas_err={feas:.1e}")
    assert record(3, ok, "; ".join(parts), t0)


def test_c4_ood_signal():
    t0 = time.perf_counter()
    cfg = _cfg()
    manifest = ex.build_manifest(cfg)
    det = ex.fit_detector(cfg, "g12", ex.dataset(cfg, "g12"), manifest)
    choose = pol.bb_chooser(manifest)

    def rate(dist):
        hs = [pol.rollout(t, manifest, cfg.env, choose, keep_states=True).states[-1].throughputs()
              for t in ex.dataset(cfg, dist).test]
        return float(np.mean(det.decision(nd_training_samples(hs, det.k, det.window)) < 0))

    r_in, r_out = rate("g12"), rate("exp")
    assert record(4, r_out >= 2 * r_in, f"r_in={r_in:.3f} r_out={r_out:.3f}", t0)


def test_c5_calibration(study):
    t0 = time.perf_counter()
    cells, parts, good = study["cells"], [], 0
    for d in TRAIN:
        nd = cells[(d, d, "ND")].mean_qoe
        gaps = {s: abs(cells[(d, d, s)].mean_qoe - nd) / abs(nd) for s in ("A", "V")}
        cal = {s: study["stacks"][d].calibrations[s].gap / abs(study["stacks"][d].calibrations[s].target_qoe)
               for s in ("A", "V")}
        ok = all(g <= 0.05 for g in gaps.values())
        good += ok
        parts.append(f"{d}: test gap A={gaps['A']:.3f} V={gaps['V']:.3f} (validation A={cal['A']:.3f} "
                     f"V={cal['V']:.3f})")
    assert record(5, good >= 2, f"{good}/3 distributions within 5%; " + "; ".join(parts)
                  + f"; training+eval {study['seconds']:.0f}s", t0)


def test_c6_safety_net(study):
    t0 = time.perf_counter()
    cells = study["cells"]
    # pre-registered choice: the OOD cell where the unguarded agent does worst relative to BB
    ood = [(c.normalized, c.train, c.test) for k, c in cells.items()
           if k[2] == "vanilla" and c.train != c.test and not math.isnan(c.normalized)]
    score, tr, te = min(ood)
    ok = score < 1
    parts = [f"pair {tr}->{te}: vanilla={score:.3f}"]
    for s in ("ND", "A", "V"):
        o, i = cells[(tr, te, s)], cells[(tr, tr, s)]
        ok &= o.normalized > score and o.default_rate > i.default_rate
        parts.append(f"{s}={o.normalized:.3f} (default ood {o.default_rate:.2f} > in {i.default_rate:.2f})")
    assert record(6, ok, ", ".join(parts), t0)


def test_c7_degenerate_thresholds(study):
    t0 = time.perf_counter()
    cfg, manifest = study["cfg"], study["manifest"]
    sg = study["stacks"]["g22"].safeguard
    rates = manifest.rates.tolist()
    worst, mism = 0.0, 0
    for tr in study["tests"]["exp"][:5] + study["tests"]["g22"][:5]:
        van = run_episode("agent", sg, ControllerConfig(), tr, manifest, cfg.env)
        for s in ("A", "V"):
            inf = run_episode("agent", sg, ControllerConfig(s, 5, 1, math.inf), tr, manifest, cfg.env)
            worst = max(worst, abs(inf.total_qoe - van.total_qoe))
            zero = run_episode("agent", sg, ControllerConfig(s, 5, 1, 0.0), tr, manifest, cfg.env, keep_states=True)
            first = zero.default_step if zero.default_step is not None else 4
            for n in range(4, manifest.chunk_count):
                if zero.chunks[n].level != pol.bb_decide(zero.states[n].buffer, rates, cfg.reservoir, cfg.cushion):
                    mism += 1
            mism += first != 4
    ok = worst <= 1e-9 and mism == 0
    assert record(7, ok, f"alpha=inf max dQoE={worst:.1e}; alpha=0,l=1 decisions differing from BB: {mism}", t0)


def test_c8_determinism(tmp_path):
    t0 = time.perf_counter()
    exe = [sys.executable, "-m", "safeabr.cli"]
    cfg = str(ROOT / "configs" / "tiny.ini")
    for out in ("a", "b"):
        subprocess.run(exe + ["run", "--config", cfg, "--seed", "5", "--out", str(tmp_path / out), "--train"],
                       check=True, capture_output=True)
    names = ("episodes.csv", "cells.csv", "arms.csv", "cdf.csv")
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    assert record(8, same, f"{len(names)} report files byte-identical across two runs", t0)


def test_c9_gradients():
    t0 = time.perf_counter()
    from test_policies import gradient_check
    worst = max(gradient_check(s) for s in range(3))
    assert record(9, worst < 1e-4, f"max relative error {worst:.2e}", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
