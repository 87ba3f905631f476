"""
Unit tests for the observation heads.
"""

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from scipy import integrate, stats

from errors import InputError
from observations import (
    NormalObservation,
    ObservationParams,
    PoissonObservation,
    StudentTObservation,
    get_observation,
    inverse_softplus_np,
    softplus_np,
)


def tensor(*values: float) -> torch.Tensor:
    return torch.tensor(values, dtype=torch.float64)


class TestRegistry:
    def test_known_heads(self):
        assert isinstance(get_observation("Normal"), NormalObservation)
        assert isinstance(get_observation("StudentT"), StudentTObservation)
        assert isinstance(get_observation("Poisson"), PoissonObservation)

    def test_heads_are_shared(self):
        assert get_observation("Normal") is get_observation("Normal")

    def test_unknown_kind(self):
        with pytest.raises(InputError, match="Unknown observation kind"):
            get_observation("Gamma")

    def test_parameter_counts(self):
        assert [get_observation(k).n_y for k in ("Normal", "StudentT", "Poisson")] == [1, 2, 0]


class TestSoftplus:
    def test_inverse(self):
        y = np.array([1e-6, 0.01, 1.0, 30.0])
        np.testing.assert_allclose(softplus_np(inverse_softplus_np(y)), y, rtol=1e-10)

    def test_constrained_values_positive(self):
        raw = tensor(-40.0, 0.0, 40.0)
        assert bool((get_observation("Normal").constrain(raw) > 0).all())

    def test_student_df_offset(self):
        derived = get_observation("StudentT").constrain_np([0.0, -50.0])
        assert derived[0] == pytest.approx(np.log(2.0))
        assert derived[1] == pytest.approx(2.0, abs=1e-6)
        assert derived[1] > 2.0

    def test_student_df_stays_above_two_in_torch(self):
        derived = get_observation("StudentT").constrain(tensor(0.0, -800.0))
        assert float(derived[1]) > 2.0
        assert bool(torch.isfinite(derived).all())


class TestObservationParams:
    def test_for_kind(self):
        params = ObservationParams.for_kind("StudentT", scale=2.0, df=5.0)
        assert params.names == ("scale", "df")
        assert params.get("df") == 5.0

    def test_missing_parameter(self):
        with pytest.raises(InputError):
            ObservationParams.for_kind("Normal")

    def test_nonpositive_rejected(self):
        with pytest.raises(ValidationError):
            ObservationParams(kind="Normal", names=("variance",), values=(0.0,))

    def test_from_raw(self):
        params = get_observation("Normal").params_from_raw([0.0])
        assert params.get("variance") == pytest.approx(np.log(2.0))


class TestNormalHead:
    def test_log_prob_at_mode(self):
        head = get_observation("Normal")
        value = head.log_prob(tensor(0.0), tensor(0.0), tensor(1.0))
        assert float(value[0]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_variance_not_stddev(self):
        head = get_observation("Normal")
        assert head.cdf(2.0, 0.0, np.array([4.0])) == pytest.approx(stats.norm.cdf(1.0))


class TestStudentTHead:
    @pytest.mark.parametrize("y", [-30.0, -2.0, -0.1, 0.0, 0.7, 3.0, 250.0])
    def test_cdf_matches_scipy(self, y):
        head = get_observation("StudentT")
        derived = np.array([1.5, 3.7])
        expected = stats.t.cdf(y, 3.7, loc=0.4, scale=1.5)
        assert head.cdf(y, 0.4, derived) == pytest.approx(expected, abs=1e-12)

    def test_deep_tail_is_accurate(self):
        head = get_observation("StudentT")
        value = head.cdf(-1e4, 0.0, np.array([1.0, 5.0]))
        assert value == pytest.approx(stats.t.sf(1e4, 5.0), rel=1e-8)

    def test_density_normalizes(self):
        head = get_observation("StudentT")
        derived = tensor(2.0, 5.0)

        def density(y):
            return float(torch.exp(head.log_prob(tensor(1.0), tensor(y), derived))[0])

        total, _ = integrate.quad(density, -np.inf, np.inf, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_log_prob_matches_scipy(self):
        head = get_observation("StudentT")
        value = head.log_prob(tensor(1.0), tensor(3.0), tensor(2.0, 5.0))
        assert float(value[0]) == pytest.approx(stats.t.logpdf(3.0, 5.0, loc=1.0, scale=2.0), abs=1e-10)


class TestPoissonHead:
    def test_log_mass_rate_one(self):
        head = get_observation("Poisson")
        value = head.log_prob(tensor(0.0), tensor(0.0), tensor())
        assert float(value[0]) == pytest.approx(-1.0, abs=1e-12)

    def test_targets_must_be_counts(self):
        head = get_observation("Poisson")
        head.validate_targets(np.array([0.0, 3.0, 7.0]))
        with pytest.raises(InputError):
            head.validate_targets(np.array([1.5]))
        with pytest.raises(InputError):
            head.validate_targets(np.array([-1.0]))

    def test_samples_are_counts(self):
        draws = get_observation("Poisson").sample(np.full(100, 1.2), np.zeros((100, 0)), np.random.default_rng(0))
        assert np.all(draws >= 0)
        assert np.all(draws == np.floor(draws))

    def test_non_finite_targets(self):
        with pytest.raises(InputError):
            get_observation("Normal").validate_targets(np.array([np.nan]))
