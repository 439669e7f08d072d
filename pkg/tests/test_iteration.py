import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phicaloric.errors import RangeError
from phicaloric.iteration import (
    DEFAULT_GRID,
    RecursionParams,
    decay_certificate,
    decay_csv,
    gamma_threshold,
    inductive_step_holds,
    iterate_bound,
    verify_decay,
)


def direct(a0, C, b, alpha, gamma, K):
    """Plain floating-point recursion, used as an independent oracle."""
    a = [a0]
    for k in range(K):
        a.append(C * b**k * a[-1] * (a[-1] / gamma) ** alpha)
        if not math.isfinite(a[-1]):
            break
    return a


def test_threshold_examples():
    assert gamma_threshold(1, 1, 2, 1) == pytest.approx(2.0)
    assert gamma_threshold(1, 4, 4, 2) == pytest.approx(2 * math.sqrt(2))
    assert gamma_threshold(0, 1, 2, 1) == 0.0


def test_threshold_overflow():
    with pytest.raises(RangeError):
        gamma_threshold(1e300, 1e10, 2.0, 0.1)
    with pytest.raises(ValueError):
        gamma_threshold(1, 1, 1.0, 1)


def test_params_validation():
    with pytest.raises(ValueError):
        RecursionParams(-1, 1, 2, 1)
    with pytest.raises(ValueError):
        RecursionParams(1, 1, 2, float("nan"))


def test_canonical_sequence():
    a, over = iterate_bound(RecursionParams(1, 1, 2, 1, 2.0), 10)
    np.testing.assert_allclose(a, 2.0 ** -np.arange(11), rtol=1e-14)
    np.testing.assert_allclose(a[:4], direct(1, 1, 2, 1, 2.0, 3), rtol=1e-14)
    assert not over.any()


def test_threshold_default_matches_certificate():
    prm = RecursionParams(1, 1, 2, 1)
    a, _ = iterate_bound(prm, 200)
    np.testing.assert_allclose(a, decay_certificate(prm, 200), rtol=1e-13)


def test_zero_start():
    a, over = iterate_bound(RecursionParams(0, 1, 2, 1), 20)
    assert np.all(a == 0) and not over.any()


def test_below_threshold_diverges():
    g = 0.5 * gamma_threshold(1, 1, 2, 1)
    a, over = iterate_bound(RecursionParams(1, 1, 2, 1, g), 40)
    assert np.any(a > 1e6) or over.any()
    ref = direct(1, 1, 2, 1, g, 40)
    assert max(ref) > 1e6
    k = next(i for i, x in enumerate(ref) if x > 1e6)
    assert k <= 40


@settings(max_examples=100, deadline=None)
@given(s=st.floats(1e-3, 1e3), C=st.sampled_from([1.0, 10.0]), b=st.sampled_from([2.0, 8.0]),
       alpha=st.sampled_from([0.5, 1.0, 2.0]))
def test_homogeneity(s, C, b, alpha):
    g = gamma_threshold(1.0, C, b, alpha) * 1.5
    a1, _ = iterate_bound(RecursionParams(1.0, C, b, alpha, g), 30)
    a2, _ = iterate_bound(RecursionParams(s, C, b, alpha, s * g), 30)
    np.testing.assert_allclose(a2, s * a1, rtol=1e-9, atol=1e-300)


@pytest.mark.parametrize("factor", [1.0, 1.1, 2.0, 10.0])
def test_monotone_in_gamma(factor):
    prm = RecursionParams(1.0, 10.0, 8.0, 0.5)
    base, _ = iterate_bound(prm, 60)
    up, _ = iterate_bound(prm.with_gamma(prm.threshold() * factor), 60)
    assert np.all(up <= base * (1 + 1e-9))


def test_direct_recursion_agrees_with_log_form():
    prm = RecursionParams(1e-3, 10.0, 8.0, 2.0)
    g = prm.threshold() * 1.01
    a, _ = iterate_bound(prm.with_gamma(g), 15)
    np.testing.assert_allclose(a, direct(1e-3, 10.0, 8.0, 2.0, g, 15), rtol=1e-9)


def test_large_alpha_decays_at_certificate_rate():
    prm = RecursionParams(1.0, 10.0, 2.0, 8.0)
    a, _ = iterate_bound(prm, 200)
    assert a[-1] < 1e-7
    rate = (a[-1] / a[100]) ** (1 / 100)
    assert rate == pytest.approx(2.0 ** (-1 / 8), rel=1e-9)


def test_inductive_step():
    prm = RecursionParams(1.0, 10.0, 8.0, 0.5)
    assert all(inductive_step_holds(prm, k) for k in range(50))
    assert not inductive_step_holds(prm.with_gamma(prm.threshold() * 0.5), 0)


def test_verify_decay_grid():
    rows = verify_decay()
    assert len(rows) == 54
    assert all(r.passed for r in rows)
    assert all(r.ratio_final < 1e-10 for r in rows)
    assert len(DEFAULT_GRID["a0"]) * len(DEFAULT_GRID["C"]) == 9


def test_decay_csv_header():
    text = decay_csv(verify_decay({"a0": (1.0,), "C": (1.0,), "b": (2.0,), "alpha": (1.0,)}, K=50))
    lines = text.splitlines()
    assert lines[0] == "a0,C,b,alpha,gamma,k_decay,pass"
    assert lines[1].endswith(",1") and len(lines) == 2


def test_iterate_bound_K_limit():
    with pytest.raises(ValueError):
        iterate_bound(RecursionParams(1, 1, 2, 1), 10_001)
