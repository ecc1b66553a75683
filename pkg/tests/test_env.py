import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safeabr.env import (EnvConfig, EnvError, SessionState, VideoManifest, download_time, episode_qoe,
                         initial_state, load_manifest, qoe_chunk, step, synth_manifest, write_manifest)
from safeabr.traces import Trace

from conftest import constant_trace


def unit_manifest(size_bytes, duration=4.0, chunks=3):
    return VideoManifest(("a", "b"), np.array([1.0, 2.0]), duration,
                         np.full((2, chunks), size_bytes, dtype=np.int64))


def test_default_manifest_shape():
    m = synth_manifest()
    assert m.levels == 6 and m.chunk_count == 240 and m.chunk_duration == 4.0
    assert np.array_equal(m.sizes[:, 0], m.sizes[:, 48])
    assert np.array_equal(m.sizes[:, :48], m.sizes[:, 192:])


def test_noiseless_sizes():
    m = synth_manifest(size_noise_sigma=0.0)
    expected = np.rint(np.array(m.rates)[:, None] * 4.0 * 1e6 / 8) * np.ones((1, 240))
    assert np.array_equal(m.sizes, expected.astype(np.int64))


def test_manifest_roundtrip(tmp_path, manifest):
    write_manifest(manifest, tmp_path / "m.txt")
    back = load_manifest(tmp_path / "m.txt")
    assert back == manifest and back.labels[-1] == "1400p"


def test_manifest_missing_row(tmp_path, manifest):
    write_manifest(manifest, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    (tmp_path / "bad.txt").write_text("\n".join(lines[:-2] + lines[-1:]) + "\n")
    with pytest.raises(EnvError):
        load_manifest(tmp_path / "bad.txt")


def test_constant_link_download():
    dl, _ = download_time(1_000_000, constant_trace(2.0), 0.0, 0.08)
    assert dl == pytest.approx(4.08, abs=1e-12)


def test_tiny_download():
    dl, _ = download_time(1, constant_trace(5.0), 0.0, 0.0)
    assert dl < 1e-5


def test_piecewise_download():
    tr = Trace([0.0, 1.0], [1.0, 3.0])
    dl, _ = download_time(250_000, tr, 0.0, 0.0)
    assert dl == pytest.approx(1 + 1 / 3, abs=1e-12)


def _oracle_download(size, times, rates, cursor, rtt, floor=0.01):
    # unroll the periodic trace and invert cumulative megabits by interpolation
    rel = times - times[0]
    period = rel[-1] + (rel[-1] - rel[-2] if len(rel) > 1 else 1.0)
    r = np.maximum(rates, floor)
    reps = 2 + int(size / 125000 / (r.min() * period))
    edges = np.concatenate([rel + k * period for k in range(reps)] + [[reps * period]])
    cum = np.concatenate([[0.0], np.cumsum(np.tile(r, reps) * np.diff(edges))])
    start = (cursor + rtt) % period
    base = np.interp(start, edges, cum)
    end = np.interp(base + size / 125000, cum, edges)
    return rtt + end - start


@settings(max_examples=60, deadline=None)
@given(rates=st.lists(st.floats(0.05, 8.0), min_size=1, max_size=12),
       size=st.integers(1000, 3_000_000), cursor=st.floats(0, 50), rtt=st.floats(0, 0.2))
def test_download_matches_integration(rates, size, cursor, rtt):
    times = np.arange(len(rates), dtype=float) * 0.7
    tr = Trace(times, rates)
    dl, _ = download_time(size, tr, cursor % tr.period, rtt)
    assert dl == pytest.approx(_oracle_download(size, times, np.array(rates), cursor % tr.period, rtt), rel=1e-9)


def test_step_arithmetic():
    m = unit_manifest(250_000)   # 2 Mb at 1 Mbps -> 2 s
    cfg = EnvConfig(rtt=0.0)
    out = step(SessionState(buffer=8.0), 0, constant_trace(1.0), m, cfg)
    assert out.download_time == pytest.approx(2.0) and out.rebuffer_time == 0.0
    assert out.next_state.buffer == pytest.approx(10.0)
    out = step(SessionState(buffer=1.0), 0, constant_trace(2.0 / 3.0), m, cfg)
    assert out.rebuffer_time == pytest.approx(2.0) and out.next_state.buffer == pytest.approx(4.0)


def test_buffer_cap_waits():
    m = unit_manifest(1000)
    cfg = EnvConfig(rtt=0.0, buffer_cap=6.0)
    out = step(SessionState(buffer=5.0), 0, constant_trace(10.0), m, cfg)
    assert out.next_state.buffer == 6.0
    assert out.wait_time == pytest.approx(5.0 - out.download_time + 4.0 - 6.0)


def test_step_errors(manifest):
    tr = constant_trace(1.0)
    with pytest.raises(EnvError):
        step(initial_state(tr), 6, tr, manifest)
    with pytest.raises(EnvError):
        step(SessionState(chunk_index=240), 0, tr, manifest)


@pytest.mark.parametrize("r,t,prev,expected", [(1.0, 0.0, None, 1.0), (3.0, 0.5, 1.0, -1.15), (2.0, 0.0, 2.0, 2.0)])
def test_qoe_chunk(r, t, prev, expected):
    assert qoe_chunk(r, t, prev, 4.3) == pytest.approx(expected, abs=1e-12)


def test_episode_qoe_oracle(short_manifest, gamma_traces):
    rng = np.random.default_rng(0)
    tr = gamma_traces[0]
    state = initial_state(tr, 3.3)
    total, rs, ts = 0.0, [], []
    while state.chunk_index < short_manifest.chunk_count:
        out = step(state, int(rng.integers(6)), tr, short_manifest)
        total += out.qoe
        rs.append(out.bitrate)
        ts.append(out.rebuffer_time)
        state = out.next_state
    assert abs(total - episode_qoe(rs, ts, 4.3)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(actions=st.lists(st.integers(0, 5), min_size=12, max_size=12), start=st.floats(0, 299))
def test_buffer_invariants(short_manifest, gamma_traces, actions, start):
    tr = gamma_traces[1]
    state = initial_state(tr, start)
    for a in actions:
        out = step(state, a, tr, short_manifest)
        assert 0.0 <= out.next_state.buffer <= 60.0
        assert out.rebuffer_time >= 0.0 and out.download_time > 0.08 - 1e-12
        assert 0.0 <= out.next_state.trace_cursor < tr.period
        assert math.isfinite(out.qoe)
        state = out.next_state
    assert out.done


def test_trace_wraps(short_manifest):
    tr = Trace([0.0, 1.0], [0.5, 0.5])
    state = initial_state(tr)
    for _ in range(short_manifest.chunk_count):
        state = step(state, 5, tr, short_manifest).next_state
    assert state.wall_clock > tr.period


@settings(max_examples=60, deadline=None)
@given(rates=st.lists(st.floats(0.0, 8.0), min_size=1, max_size=10), s1=st.integers(1, 2_000_000),
       s2=st.integers(1, 2_000_000), r1=st.floats(0, 0.3), r2=st.floats(0, 0.3), cursor=st.floats(0, 9))
def test_download_monotone(rates, s1, s2, r1, r2, cursor):
    tr = Trace(np.arange(len(rates), dtype=float), rates)
    c = cursor % tr.period
    lo, hi = sorted((s1, s2))
    assert download_time(lo, tr, c, r1)[0] <= download_time(hi, tr, c, r1)[0] + 1e-9
    # starting later never finishes earlier, so a longer RTT never shortens the download
    a, b = sorted((r1, r2))
    assert download_time(lo, tr, c, a)[0] <= download_time(lo, tr, c, b)[0] + 1e-9


def test_no_rebuffer_when_buffer_covers(manifest, gamma_traces):
    tr = gamma_traces[2]
    state = initial_state(tr)
    for i in range(60):
        out = step(state, i % 6, tr, manifest)
        if state.buffer >= out.download_time:
            assert out.rebuffer_time == 0.0
        state = out.next_state
