import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbmloss.core import (
    DomainError,
    HurstParameter,
    ProcessParams,
    SamplePath,
    TimeGrid,
    fbm_covariance,
    increment_autocov,
    rescale_path,
    to_drift_diffusion,
    to_price_path,
)
from fbmloss.pathstats import compute_stats

hursts = st.floats(min_value=0.01, max_value=0.99)
times = st.floats(min_value=0.0, max_value=50.0)


class TestHurst:
    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5, float("nan")])
    def test_rejects_outside_open_interval(self, bad):
        with pytest.raises(DomainError):
            HurstParameter(bad)

    @pytest.mark.parametrize("h,scope", [(0.3, False), (0.5, True), (0.8, True)])
    def test_scope_flag_from_one_half(self, h, scope):
        assert HurstParameter(h).paper_scope is scope


def test_time_grid_points():
    g = TimeGrid(2.5, 10)
    pts = g.points
    assert pts[0] == 0.0 and pts[-1] == 2.5 and pts.size == 11
    assert np.allclose(np.diff(pts), 0.25)
    with pytest.raises(DomainError):
        TimeGrid(0.0, 4)
    with pytest.raises(DomainError):
        TimeGrid(1.0, 0)


def test_process_params_validation():
    assert ProcessParams(0.7).is_standard
    assert not ProcessParams(0.7, mu=0.1).is_standard
    with pytest.raises(DomainError):
        ProcessParams(0.7, sigma=0.0)
    with pytest.raises(DomainError):
        ProcessParams(0.7, horizon=-1.0)


def test_sample_path_length_checked():
    with pytest.raises(DomainError):
        SamplePath(TimeGrid(1.0, 4), [0.0, 1.0])


class TestCovariance:
    def test_examples(self):
        assert fbm_covariance(1, 1, 0.7) == 1.0
        assert fbm_covariance(2, 1, 0.5) == 1.0
        assert fbm_covariance(2, 1, 0.9) == pytest.approx(0.5 * 2**1.8, abs=1e-12)
        assert fbm_covariance(2, 1, 0.9) == pytest.approx(1.74110, abs=5e-6)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            fbm_covariance(-1, 1, 0.6)

    @given(times, times, hursts)
    def test_symmetric(self, s, t, h):
        assert fbm_covariance(s, t, h) == fbm_covariance(t, s, h)

    @given(times, hursts)
    def test_diagonal_exact(self, t, h):
        assert fbm_covariance(t, t, h) == np.power(t, 2.0 * h)

    @given(times, times)
    def test_brownian_is_min(self, s, t):
        assert fbm_covariance(s, t, 0.5) == pytest.approx(min(s, t), abs=1e-12)

    @pytest.mark.parametrize("h", [0.1, 0.5, 0.75, 0.95])
    @pytest.mark.parametrize("n", [16, 256, 1024])
    def test_grid_covariance_positive_definite(self, h, n):
        pts = TimeGrid(1.0, n).points[1:]
        cov = fbm_covariance(pts[:, None], pts[None, :], h)
        assert np.array_equal(cov, cov.T)
        np.linalg.cholesky(cov)


class TestIncrementAutocov:
    def test_examples(self):
        assert increment_autocov(1, 1.0, 0.5) == 0.0
        assert increment_autocov(1, 1.0, 0.75) == pytest.approx(0.5 * (2**1.5 - 2), abs=1e-14)
        assert increment_autocov(1, 1.0, 0.75) == pytest.approx(0.41421, abs=5e-6)
        assert increment_autocov(0, 1.0, 0.6) == 1.0

    @given(st.integers(1, 500), st.floats(1e-3, 10.0), hursts)
    def test_sign_follows_hurst(self, n, lag_h, h):
        r = increment_autocov(n, lag_h, h)
        if h > 0.5:
            assert r > 0
        elif h < 0.5:
            assert r < 0

    @given(st.integers(1, 500), st.floats(1e-3, 10.0))
    def test_zero_for_brownian(self, n, lag_h):
        assert increment_autocov(n, lag_h, 0.5) == 0.0

    @pytest.mark.parametrize("h", [0.2, 0.5, 0.7, 0.9])
    @pytest.mark.parametrize("lag_h", [0.01, 1.0, 3.0])
    def test_sum_identity(self, h, lag_h):
        # variance of B at time k h equals the sum of all increment covariances
        for k in (1, 2, 7, 40, 200):
            i = np.arange(k)
            total = increment_autocov(np.abs(i[:, None] - i[None, :]), lag_h, h).sum()
            assert total == pytest.approx((k * lag_h) ** (2 * h), rel=1e-10)

    def test_bad_step(self):
        with pytest.raises(DomainError):
            increment_autocov(1, 0.0, 0.7)


def _path(values, horizon=None):
    values = np.asarray(values, dtype=float)
    n = values.size - 1
    return SamplePath(TimeGrid(horizon or float(n), n), values)


class TestTransforms:
    def test_rescale_identity(self):
        p = _path([0.0, 0.3, -0.2, 0.9])
        assert rescale_path(p, 1.0, 0.7) is p

    def test_rescale_zero_path(self):
        p = _path(np.zeros(5), horizon=1.0)
        q = rescale_path(p, 4.0, 0.5)
        assert q.grid.horizon == 4.0
        assert np.all(q.values == 0)

    def test_rescale_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            rescale_path(_path([0.0, 1.0]), 0.0, 0.5)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=40), st.floats(0.1, 20.0), hursts)
    def test_rescale_scales_max_loss(self, tail, c, h):
        p = _path([0.0] + tail)
        q = rescale_path(p, c, h)
        assert compute_stats(q).max_loss == pytest.approx(c**h * compute_stats(p).max_loss,
                                                          rel=1e-12, abs=1e-12)
        assert np.allclose(q.times, c * p.times)

    def test_drift_identity(self):
        p = _path([0.0, 1.0, -1.0])
        assert to_drift_diffusion(p, ProcessParams(0.6)) is p

    def test_drift_examples(self):
        zero = SamplePath(TimeGrid(1.0, 2), np.zeros(3))
        out = to_drift_diffusion(zero, ProcessParams(0.6, mu=2.0))
        assert np.allclose(out.values, [0.0, 1.0, 2.0])
        p = SamplePath(TimeGrid(2.0, 2), [0.0, 1.0, -1.0])
        out = to_drift_diffusion(p, ProcessParams(0.6, mu=1.0, sigma=2.0, horizon=2.0))
        assert np.array_equal(out.values, [0.0, 3.0, 0.0])

    def test_price_examples(self):
        zero = SamplePath(TimeGrid(1.0, 4), np.zeros(5))
        assert np.array_equal(to_price_path(zero, 1.0, 0.0, 0.0, 1.0).values, np.ones(5))
        end = to_price_path(zero, 100.0, 0.05, 0.0, 1.0).values[-1]
        assert end == pytest.approx(100 * math.exp(0.05)) and end == pytest.approx(105.127, abs=1e-3)
        p = SamplePath(TimeGrid(1.0, 1), [0.0, 1.0])
        assert np.allclose(to_price_path(p, 1.0, 0.0, 0.0, 1.0).values, [1.0, math.e])

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.floats(-1, 1), st.floats(0.01, 3))
    def test_price_positive(self, tail, mu, sigma):
        p = _path([0.0] + tail, horizon=1.0)
        assert np.all(to_price_path(p, 2.0, 0.01, mu, sigma).values > 0)

    def test_price_rejects_bad_args(self):
        p = _path([0.0, 1.0])
        with pytest.raises(DomainError):
            to_price_path(p, 0.0, 0.0, 0.0, 1.0)
        with pytest.raises(DomainError):
            to_price_path(p, 1.0, 0.0, 0.0, -1.0)
