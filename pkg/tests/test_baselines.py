import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowcast.baselines import EmpiricalDist, climatology_quantile, mupen_sample
from flowcast.estimators import ClimatologyForecaster, FlowForecaster, MuPEnForecaster
from flowcast.synthetic import conditional_bimodal


def sort_and_index(values, alpha):
    """Brute-force type-7 quantile: walk the sorted list by hand."""
    v = sorted(values)
    h = (len(v) - 1) * alpha
    j = int(h)
    if j == len(v) - 1:
        return v[j]
    return v[j] + (h - j) * (v[j + 1] - v[j])


def test_two_point_median():
    assert climatology_quantile(EmpiricalDist([0.0, 1.0]), 0.5) == 0.5


def test_three_point_median():
    assert climatology_quantile(EmpiricalDist([3.0, 1.0, 2.0]), 0.5) == 2.0


def test_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        values = rng.normal(size=int(rng.integers(1, 40))).tolist()
        alpha = float(rng.uniform(1e-6, 1 - 1e-6))
        assert climatology_quantile(EmpiricalDist(values), alpha) == pytest.approx(
            sort_and_index(values, alpha), abs=1e-12
        )


def test_agrees_with_numpy_linear_method():
    values = np.random.default_rng(1).uniform(size=101)
    levels = np.linspace(0.01, 0.99, 25)
    ours = [climatology_quantile(EmpiricalDist(values), a) for a in levels]
    np.testing.assert_allclose(ours, np.quantile(values, levels, method="linear"), rtol=0, atol=1e-14)


@given(
    arrays(np.float64, st.integers(1, 30), elements=st.floats(-100, 100)),
    st.lists(st.floats(1e-6, 1 - 1e-6), min_size=2, max_size=10),
)
def test_quantile_nondecreasing_in_alpha(values, levels):
    dist = EmpiricalDist(values)
    q = [climatology_quantile(dist, a) for a in sorted(levels)]
    assert all(b >= a for a, b in zip(q, q[1:]))


def test_empty_and_bad_levels():
    with pytest.raises(ValueError):
        EmpiricalDist([])
    with pytest.raises(ValueError):
        climatology_quantile(EmpiricalDist([1.0]), 0.0)
    with pytest.raises(ValueError):
        climatology_quantile(EmpiricalDist([1.0]), 1.0)


def test_empirical_dist_sorted_cdf():
    dist = EmpiricalDist([0.3, 0.1, 0.2, 0.2])
    np.testing.assert_array_equal(dist.values, [0.1, 0.2, 0.2, 0.3])
    np.testing.assert_array_equal(dist.cdf([0.0, 0.2, 0.3]), [0.0, 0.75, 1.0])


# ------------------------------------------------------------ MuPEn


def test_full_draw_is_permutation(rng):
    history = rng.normal(size=(7, 3))
    draw = mupen_sample(history, 7, rng)
    assert sorted(map(tuple, draw)) == sorted(map(tuple, history))


def test_single_draw_is_a_row(rng):
    history = rng.normal(size=(5, 2))
    row = mupen_sample(history, 1, rng)
    assert row.shape == (1, 2)
    assert any(np.array_equal(row[0], h) for h in history)


def test_pair_frequencies_uniform():
    history = np.arange(4.0)[:, None]
    rng = np.random.default_rng(2)
    counts = Counter(frozenset(mupen_sample(history, 2, rng)[:, 0]) for _ in range(10_000))
    assert len(counts) == 6
    for pair in itertools.combinations(range(4), 2):
        assert abs(counts[frozenset(map(float, pair))] / 10_000 - 1 / 6) < 0.02


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_draws_are_distinct_history_rows(count, seed):
    history = np.arange(36.0).reshape(12, 3)
    draw = mupen_sample(history, count, np.random.default_rng(seed))
    rows = {tuple(r) for r in history}
    assert all(tuple(r) in rows for r in draw)
    assert len({tuple(r) for r in draw}) == count


def test_too_many_scenarios(rng):
    with pytest.raises(ValueError):
        mupen_sample(np.zeros((3, 1)), 4, rng)


def test_mupen_seeded():
    history = np.arange(20.0)[:, None]
    a = mupen_sample(history, 5, np.random.default_rng(3))
    b = mupen_sample(history, 5, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


# ------------------------------------------------------------ estimators


def test_climatology_forecaster_quantiles_constant_over_rows():
    X = np.zeros((4, 2))
    y = np.array([0.1, 0.4, 0.2, 0.3])
    est = ClimatologyForecaster().fit(X, y)
    q = est.predict_quantiles(np.ones((3, 2)), [0.5])
    np.testing.assert_allclose(q, 0.25)
    assert est.sample(np.ones((2, 2)), 10).shape == (2, 10, 1)


def test_mupen_forecaster_scenarios():
    X = np.zeros((6, 1))
    Y = np.arange(18.0).reshape(6, 3)
    scen = MuPEnForecaster(random_state=1).fit(X, Y).sample(np.zeros((2, 1)), 4)
    assert scen.shape == (2, 4, 3)
    with pytest.raises(ValueError):
        MuPEnForecaster().fit(X, Y).predict_quantiles(X, [0.5])


def test_climatology_never_beats_trained_flow_on_conditional_data():
    rng = np.random.default_rng(4)
    X, y = conditional_bimodal(4000, rng)
    Xt, yt = conditional_bimodal(300, rng)
    clim = ClimatologyForecaster().fit(X, y)
    flow = FlowForecaster(
        n_transforms=2, n_knots=8, base_hidden=(32,), cond_hidden=(32,),
        lr=3e-3, max_iter=800, decay_every=1000, patience=100,
    ).fit(X, y)
    flow_crps = flow.crps(Xt, yt).mean()
    clim_crps = clim.crps(Xt, yt).mean()
    assert math.isfinite(flow_crps)
    assert clim_crps >= flow_crps
