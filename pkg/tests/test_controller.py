import math

import pytest
from hypothesis import given, settings, strategies as st

from safeabr.controller import (ControllerConfig, ControllerState, Decision, ensemble_update, first_default_step,
                                nd_update, rolling_variances, window_variance)

D, U = Decision.DEFAULT, Decision.USE_LEARNED


def run_nd(flags, l=3, sticky=True):
    cfg = ControllerConfig("ND", l_consecutive=l, sticky=sticky)
    st_ = ControllerState.fresh(cfg)
    return [nd_update(st_, f, cfg) for f in flags], st_


def test_nd_three_in_a_row():
    out, _ = run_nd([True, True, True])
    assert out == [U, U, D]


def test_nd_reset():
    out, s = run_nd([True, True, False])
    assert out == [U, U, U] and s.consecutive == 0


def test_nd_l1():
    out, _ = run_nd([False, True, False], l=1)
    assert out == [U, D, D]


def test_non_sticky_switches_back():
    out, _ = run_nd([True, False, True], l=1, sticky=False)
    assert out == [D, U, D]


def test_config_validation():
    for kw in ({"scheme": "X"}, {"k_window": 0}, {"l_consecutive": 0}, {"alpha": -1.0}):
        with pytest.raises(ValueError):
            ControllerConfig(**{"scheme": "A", **kw})
    with pytest.raises(ValueError):
        nd_update(ControllerState(), True, ControllerConfig("A"))


def run_ens(scores, alpha, l=1, k=5):
    cfg = ControllerConfig("V", k_window=k, l_consecutive=l, alpha=alpha)
    s = ControllerState.fresh(cfg)
    return [ensemble_update(s, x, cfg) for x in scores]


def test_ring_variance():
    assert window_variance([0, 0, 0, 0, 5]) == 4.0
    assert run_ens([0, 0, 0, 0, 5], alpha=3.99)[-1] is D
    assert run_ens([0, 0, 0, 0, 5], alpha=4.0)[-1] is U


def test_constant_never_defaults():
    assert D not in run_ens([2.0] * 50, alpha=1e-12)


def test_warmup():
    assert run_ens([0, 100, -100], alpha=0.0) == [U, U, U]


@settings(max_examples=100, deadline=None)
@given(scores=st.lists(st.floats(0, 10), min_size=5, max_size=40), a1=st.floats(0, 5), a2=st.floats(0, 5),
       l1=st.integers(1, 5), l2=st.integers(1, 5))
def test_monotone_and_sticky(scores, a1, a2, l1, l2):
    lo, hi = sorted((a1, a2))
    ls, lh = sorted((l1, l2))
    v = rolling_variances(scores, 5)

    def first(alpha, l):
        out = run_ens(scores, alpha, l)
        d = out.index(D) if D in out else math.inf
        if d != math.inf:
            assert all(x is D for x in out[d:])
        return d

    assert first(hi, ls) >= first(lo, ls)
    assert first(lo, lh) >= first(lo, ls)
    fd = first_default_step(v, lo, ls)
    assert (math.inf if fd is None else fd) == first(lo, ls)


def test_counter_capped():
    cfg = ControllerConfig("ND", l_consecutive=2, sticky=False)
    s = ControllerState.fresh(cfg)
    for _ in range(10):
        nd_update(s, True, cfg)
        assert s.consecutive <= 2
