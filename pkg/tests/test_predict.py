"""
Unit tests for predictive mixtures and batch prediction.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate, stats

from errors import CompatibilityError, InputError
from inference import PosteriorEnsemble
from model import init_params
from models import FeatureSpec, NetworkConfig, ObservationModel, SpaceTimeIndex
from observations import ObservationParams
from predict import (
    PredictiveMixture,
    check_compatible,
    mixture_cdf,
    mixture_expectation,
    mixture_interval,
    mixture_mean,
    mixture_pdf,
    mixture_quantile,
    mixture_sample,
    predict_batch,
    predictive_at,
    quantile_column,
)


def normal_mix(*components: tuple[float, float]) -> PredictiveMixture:
    return PredictiveMixture(
        kind="Normal",
        locations=[F for F, _ in components],
        params=[[v] for _, v in components],
    )


def student_mix(*components: tuple[float, float, float]) -> PredictiveMixture:
    return PredictiveMixture(
        kind="StudentT",
        locations=[F for F, _, _ in components],
        params=[[scale, df] for _, scale, df in components],
    )


def poisson_mix(*log_rates: float) -> PredictiveMixture:
    return PredictiveMixture(kind="Poisson", locations=list(log_rates), params=np.zeros((len(log_rates), 0)))


def random_mixture(rng: np.random.Generator) -> PredictiveMixture:
    m = int(rng.integers(1, 6))
    if rng.random() < 0.5:
        return normal_mix(*[(rng.normal(0, 5), rng.uniform(0.01, 4)) for _ in range(m)])
    return student_mix(*[(rng.normal(0, 5), rng.uniform(0.1, 3), rng.uniform(2.1, 30)) for _ in range(m)])


def make_ensemble(kind: str = "Normal", n_members: int = 3) -> tuple[PosteriorEnsemble, NetworkConfig, FeatureSpec]:
    spec = FeatureSpec(d=2)
    network = NetworkConfig(widths=(4,), activations=(("tanh", "relu"),), m=3, observation=ObservationModel(kind=kind))
    members = [init_params(network, seed) for seed in range(n_members)]
    return PosteriorEnsemble.from_members("MAP", members, network, spec), network, spec


def query_indices(n: int, seed: int = 0) -> list[SpaceTimeIndex]:
    rng = np.random.default_rng(seed)
    return [SpaceTimeIndex(space=tuple(rng.uniform(0, 1, 2)), time=float(t)) for t in range(n)]


class TestPredictiveMixture:
    def test_needs_components(self):
        with pytest.raises(ValueError):
            PredictiveMixture(kind="Normal", locations=[], params=np.zeros((0, 1)))

    def test_param_shape_checked(self):
        with pytest.raises(ValidationError):
            PredictiveMixture(kind="StudentT", locations=[0.0], params=[[1.0]])

    def test_from_components(self):
        mix = PredictiveMixture.from_components(
            "Normal", [(0.5, ObservationParams.for_kind("Normal", variance=2.0))]
        )
        assert mix.size == 1
        F, params = mix.components[0]
        assert F == 0.5
        assert params.get("variance") == 2.0


class TestMixtureDensity:
    def test_symmetric_pair_density(self):
        assert mixture_pdf(normal_mix((0.0, 1.0), (2.0, 1.0)), 1.0) == pytest.approx(0.2419707, abs=1e-6)

    def test_identical_components(self):
        single = normal_mix((1.0, 2.0))
        triple = normal_mix((1.0, 2.0), (1.0, 2.0), (1.0, 2.0))
        for y in (-3.0, 0.0, 1.0, 4.5):
            assert mixture_cdf(triple, y) == pytest.approx(mixture_cdf(single, y), abs=1e-15)

    def test_cdf_limits(self):
        mix = normal_mix((0.0, 1.0), (50.0, 9.0))
        assert mixture_cdf(mix, -1e9) == pytest.approx(0.0, abs=1e-9)
        assert mixture_cdf(mix, 1e9) == pytest.approx(1.0, abs=1e-9)

    def test_cdf_nondecreasing(self):
        mix = student_mix((0.0, 1.0, 3.0), (4.0, 0.5, 10.0))
        values = [mixture_cdf(mix, y) for y in np.linspace(-20, 20, 401)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("mix", [
        normal_mix((0.0, 1.0), (3.0, 0.25)),
        student_mix((1.0, 2.0, 5.0), (-2.0, 0.5, 3.0)),
    ])
    def test_pdf_integrates_to_one(self, mix):
        total, _ = integrate.quad(lambda y: mixture_pdf(mix, y), -np.inf, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_poisson_mean(self):
        assert mixture_mean(poisson_mix(0.0, math.log(2.0))) == pytest.approx(1.5)

    def test_poisson_mass(self):
        mix = poisson_mix(0.0, math.log(2.0))
        expected = 0.5 * (stats.poisson.pmf(3, 1.0) + stats.poisson.pmf(3, 2.0))
        assert mixture_pdf(mix, 3.0) == pytest.approx(expected, rel=1e-12)
        assert mixture_pdf(mix, 2.5) == 0.0

    def test_student_mean(self):
        assert mixture_mean(student_mix((1.0, 2.0, 5.0), (3.0, 1.0, 4.0))) == pytest.approx(2.0)

    def test_monte_carlo_agreement(self):
        mix = normal_mix((-1.0, 0.5), (2.0, 2.0))
        samples = mixture_sample(mix, 100000, seed=0)
        for y in (-2.0, -1.0, 0.0, 1.5, 3.0):
            p = mixture_cdf(mix, y)
            stderr = math.sqrt(p * (1 - p) / len(samples))
            assert abs(np.mean(samples <= y) - p) <= 3 * stderr + 1e-12

    def test_expectation_of_function(self):
        mix = normal_mix((-1.0, 0.5), (2.0, 2.0))
        assert mixture_expectation(mix, lambda y: y, n_samples=40000) == pytest.approx(mixture_mean(mix), abs=0.05)
        assert mixture_expectation(mix, lambda y: (y > 100.0).astype(float), n_samples=1000) == 0.0


class TestMixtureQuantile:
    def test_standard_normal(self):
        mix = normal_mix((0.0, 1.0))
        assert mixture_quantile(mix, 0.5) == pytest.approx(0.0, abs=1e-9)
        assert mixture_quantile(mix, 0.975) == pytest.approx(1.959964, abs=1e-5)

    def test_symmetric_pair_median(self):
        assert mixture_quantile(normal_mix((1.0, 1.0), (5.0, 1.0)), 0.5) == pytest.approx(3.0, abs=1e-9)

    def test_random_mixtures_invert_cdf(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            mix = random_mixture(rng)
            alpha = float(rng.uniform(0.01, 0.99))
            assert abs(mixture_cdf(mix, mixture_quantile(mix, alpha)) - alpha) <= 1e-8

    def test_nondecreasing_in_level(self):
        mix = student_mix((0.0, 1.0, 2.5), (10.0, 3.0, 8.0))
        qs = [mixture_quantile(mix, a) for a in np.linspace(0.01, 0.99, 50)]
        assert all(b >= a for a, b in zip(qs, qs[1:]))

    def test_within_component_bracket(self):
        mix = normal_mix((0.0, 1.0), (10.0, 1.0))
        q = mixture_quantile(mix, 0.9)
        assert stats.norm.ppf(0.9) <= q <= 10 + stats.norm.ppf(0.9)

    def test_poisson_generalized_inverse(self):
        mix = poisson_mix(0.0, math.log(2.0), math.log(5.0))
        for alpha in (0.05, 0.3, 0.5, 0.8, 0.99):
            q = mixture_quantile(mix, alpha)
            assert q == math.floor(q)
            assert mixture_cdf(mix, q) >= alpha
            assert mixture_cdf(mix, q - 1) < alpha

    def test_level_outside_unit_interval(self):
        with pytest.raises(InputError):
            mixture_quantile(normal_mix((0.0, 1.0)), 1.0)

    def test_interval(self):
        lo, hi = mixture_interval(normal_mix((0.0, 1.0)), 0.95)
        assert lo == pytest.approx(-1.959964, abs=1e-5)
        assert hi == pytest.approx(1.959964, abs=1e-5)


class TestPredictBatch:
    def test_row_count_and_columns(self):
        ens, network, spec = make_ensemble()
        frame = predict_batch(ens, network, spec, query_indices(7), [0.025, 0.5, 0.975])
        assert len(frame) == 7
        assert list(frame.columns) == ["s1", "s2", "t", "mean", "q0.025", "q0.5", "q0.975"]

    def test_quantiles_monotone(self):
        ens, network, spec = make_ensemble("StudentT", n_members=4)
        levels = [0.05, 0.25, 0.5, 0.75, 0.95]
        frame = predict_batch(ens, network, spec, query_indices(12, seed=3), levels)
        values = frame[[quantile_column(a) for a in levels]].to_numpy()
        assert np.all(np.diff(values, axis=1) >= 0)

    def test_single_member_median_is_mean(self):
        ens, network, spec = make_ensemble(n_members=1)
        frame = predict_batch(ens, network, spec, query_indices(5), [0.5])
        np.testing.assert_allclose(frame["q0.5"], frame["mean"], atol=1e-9)

    def test_location_ids(self):
        ens, network, spec = make_ensemble()
        frame = predict_batch(ens, network, spec, query_indices(2), [0.5], location_ids=["a", "b"])
        assert frame["location_id"].tolist() == ["a", "b"]
        with pytest.raises(InputError):
            predict_batch(ens, network, spec, query_indices(2), [0.5], location_ids=["a"])

    def test_empty_query(self):
        ens, network, spec = make_ensemble()
        frame = predict_batch(ens, network, spec, [], [0.5])
        assert len(frame) == 0
        assert "q0.5" in frame.columns

    def test_matches_predictive_at(self):
        ens, network, spec = make_ensemble()
        idx = query_indices(1)[0]
        frame = predict_batch(ens, network, spec, [idx], [0.9])
        mix = predictive_at(ens, network, spec, idx)
        assert mix.size == ens.size
        assert frame["q0.9"][0] == pytest.approx(mixture_quantile(mix, 0.9), abs=1e-12)

    def test_bad_levels(self):
        ens, network, spec = make_ensemble()
        with pytest.raises(InputError):
            predict_batch(ens, network, spec, query_indices(1), [0.0])


class TestCompatibility:
    def test_unset_m_resolved(self):
        ens, network, spec = make_ensemble()
        resolved = check_compatible(ens, network.model_copy(update={"m": None}), spec)
        assert resolved.m == 3

    def test_feature_mismatch(self):
        ens, network, _ = make_ensemble()
        other = FeatureSpec(d=2, use_space_space_interactions=True)
        with pytest.raises(CompatibilityError):
            predict_batch(ens, network.model_copy(update={"m": None}), other, query_indices(1), [0.5])

    def test_network_mismatch(self):
        ens, network, spec = make_ensemble()
        with pytest.raises(CompatibilityError):
            check_compatible(ens, network.model_copy(update={"widths": (5,)}), spec)
