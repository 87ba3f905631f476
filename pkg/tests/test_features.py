"""
Unit tests for covariate construction.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from errors import InputError
from features import (
    SEASONAL_PERIODS,
    build_feature_matrix,
    build_features,
    default_feature_spec,
    feature_count,
    feature_names,
    resolve_feature_spec,
    seasonal_period,
    spatial_bounds_from,
)
from models import FeatureSpec, SeasonalTerm, SpaceTimeIndex


def make_spec(**overrides) -> FeatureSpec:
    fields = dict(d=2)
    fields.update(overrides)
    return FeatureSpec(**fields)


def full_spec() -> FeatureSpec:
    return make_spec(
        use_time_space_interactions=True,
        use_space_space_interactions=True,
        seasonal=(SeasonalTerm(period=7, harmonics=(1, 2, 3)),),
        spatial_fourier=((0, 1), (0, 1)),
        spatial_bounds=((0.0, 1.0), (0.0, 1.0)),
    )


def pairs(values: np.ndarray, names: list[str], prefix: str) -> list[tuple[float, float]]:
    out = []
    for i, name in enumerate(names):
        if name.startswith(f"cos({prefix}"):
            out.append((values[i], values[i + 1]))
    return out


class TestFeatureCount:
    def test_linear_only(self):
        assert feature_count(make_spec()) == 3

    def test_all_terms(self):
        assert feature_count(full_spec()) == 20

    def test_empty_spec(self):
        assert feature_count(FeatureSpec(d=1, use_linear=False)) == 0

    def test_exogenous_columns_counted(self):
        assert feature_count(make_spec(exogenous=("temp", "wind"))) == 5

    def test_matches_vector_length(self):
        spec = full_spec()
        vector = build_features(spec, SpaceTimeIndex(space=(0.3, 0.7), time=4.0))
        assert len(vector) == feature_count(spec)
        assert len(vector.names) == feature_count(spec)


class TestBuildFeatures:
    def test_fixed_order(self):
        spec = full_spec()
        vector = build_features(spec, SpaceTimeIndex(space=(2.0, 3.0), time=5.0))
        assert vector.names[:6] == ("t", "s1", "s2", "t*s1", "t*s2", "s1*s2")
        assert list(vector.values[:6]) == [5.0, 2.0, 3.0, 10.0, 15.0, 6.0]
        assert vector.names[6] == "cos(t;p=7,h=1)"
        assert vector.names[-1] == "sin(s2;h=1)"

    def test_seasonal_pair_at_zero(self):
        spec = make_spec(use_linear=False, seasonal=(SeasonalTerm(period=7, harmonics=(1,)),))
        vector = build_features(spec, SpaceTimeIndex(space=(0.4, 0.1), time=0.0))
        assert list(vector.values) == [1.0, 0.0]

    def test_seasonal_pair_at_half_period(self):
        p, h = 7.0, 3
        spec = make_spec(use_linear=False, seasonal=(SeasonalTerm(period=p, harmonics=(h,)),))
        vector = build_features(spec, SpaceTimeIndex(space=(0.0, 0.0), time=p / (2 * h)))
        assert vector.values[0] == pytest.approx(-1.0, abs=1e-12)
        assert vector.values[1] == pytest.approx(0.0, abs=1e-12)

    def test_spatial_pair_quarter_domain(self):
        spec = make_spec(
            use_linear=False,
            spatial_fourier=((0,), ()),
            spatial_bounds=((0.0, 4.0), (0.0, 1.0)),
        )
        vector = build_features(spec, SpaceTimeIndex(space=(1.0, 0.5), time=0.0))
        assert vector.values[0] == pytest.approx(0.0, abs=1e-12)
        assert vector.values[1] == pytest.approx(1.0, abs=1e-12)

    def test_pairs_on_unit_circle(self):
        spec = full_spec()
        rng = np.random.default_rng(3)
        for _ in range(20):
            idx = SpaceTimeIndex(space=tuple(rng.uniform(0, 1, 2)), time=float(rng.uniform(-50, 50)))
            vector = build_features(spec, idx)
            names = list(vector.names)
            for c, s in pairs(vector.values, names, "t") + pairs(vector.values, names, "s"):
                assert c * c + s * s == pytest.approx(1.0, abs=1e-12)

    def test_seasonal_periodicity(self):
        spec = make_spec(use_linear=False, seasonal=(SeasonalTerm(period=30.44, harmonics=(1, 2, 4)),))
        a = build_features(spec, SpaceTimeIndex(space=(0.0, 0.0), time=13.0))
        b = build_features(spec, SpaceTimeIndex(space=(0.0, 0.0), time=13.0 + 30.44))
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_deterministic(self):
        spec = full_spec()
        idx = SpaceTimeIndex(space=(0.12, 0.98), time=41.5)
        assert build_features(spec, idx).values.tobytes() == build_features(spec, idx).values.tobytes()

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            build_features(make_spec(), SpaceTimeIndex(space=(1.0,), time=0.0))

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            SpaceTimeIndex(space=(float("nan"), 0.0), time=0.0)
        with pytest.raises(InputError):
            build_feature_matrix(make_spec(), np.array([[0.0, np.inf]]), np.array([1.0]))

    def test_exogenous_appended_raw(self):
        spec = make_spec(exogenous=("temp",))
        vector = build_features(spec, SpaceTimeIndex(space=(1.0, 2.0), time=3.0), exogenous=[17.5])
        assert vector.names[-1] == "temp"
        assert vector.values[-1] == 17.5

    def test_exogenous_required(self):
        with pytest.raises(InputError):
            build_features(make_spec(exogenous=("temp",)), SpaceTimeIndex(space=(1.0, 2.0), time=3.0))

    def test_fourier_needs_bounds(self):
        spec = make_spec(spatial_fourier=((1,), (1,)))
        with pytest.raises(InputError):
            build_features(spec, SpaceTimeIndex(space=(1.0, 2.0), time=3.0))


class TestBuildFeatureMatrix:
    def test_rows_match_single_index(self):
        spec = full_spec()
        rng = np.random.default_rng(0)
        space = rng.uniform(0, 1, size=(6, 2))
        time = rng.uniform(0, 20, size=6)
        X = build_feature_matrix(spec, space, time)
        assert X.shape == (6, 20)
        for i in range(6):
            row = build_features(spec, SpaceTimeIndex(space=tuple(space[i]), time=float(time[i])))
            np.testing.assert_allclose(X[i], row.values, rtol=0, atol=1e-14)

    def test_empty_input(self):
        X = build_feature_matrix(make_spec(), np.zeros((0, 2)), np.zeros(0))
        assert X.shape == (0, 3)


class TestSeasonalPeriod:
    def test_table_cells(self):
        assert seasonal_period("Daily", "Weekly") == 7
        assert seasonal_period("Daily", "Yearly") == 365.25
        assert seasonal_period("Hourly", "Monthly") == 730.5
        assert seasonal_period("Weekly", "Monthly") == 4.35
        assert seasonal_period("Daily", "Monthly") == 30.44
        assert seasonal_period("Daily", "Quarterly") == 91.32
        assert seasonal_period("Hourly", "Quarterly") == 2191.5
        assert seasonal_period("Hourly", "Yearly") == 8766
        assert seasonal_period("Monthly", "Yearly") == 12
        assert seasonal_period("Quarterly", "Yearly") == 4

    def test_fine_frequencies(self):
        assert seasonal_period("Minutely", "Daily") == 1440
        assert seasonal_period("Secondly", "Yearly") == 31557600

    def test_undefined_cell(self):
        assert seasonal_period("Monthly", "Weekly") is None
        assert seasonal_period("Daily", "Hourly") is None

    def test_unknown_names(self):
        with pytest.raises(InputError):
            seasonal_period("Fortnightly", "Yearly")
        with pytest.raises(InputError):
            seasonal_period("Daily", "Decadal")

    def test_table_is_consistent(self):
        for frequency, row in SEASONAL_PERIODS.items():
            assert row[frequency] == 1


class TestSpecValidation:
    def test_harmonic_above_half_period(self):
        with pytest.raises(ValidationError):
            SeasonalTerm(period=7, harmonics=(4,))

    def test_harmonic_zero_rejected(self):
        with pytest.raises(ValidationError):
            SeasonalTerm(period=12, harmonics=(0,))

    def test_nonpositive_period(self):
        with pytest.raises(ValidationError):
            SeasonalTerm(period=0, harmonics=())

    def test_bounds_must_increase(self):
        with pytest.raises(ValidationError):
            make_spec(spatial_bounds=((1.0, 1.0), (0.0, 1.0)))

    def test_fourier_per_dimension(self):
        with pytest.raises(ValidationError):
            make_spec(spatial_fourier=((1,),))


class TestDerivedSpecs:
    def test_names_for_default_spec(self):
        spec = default_feature_spec(2, "Daily", effects=("Weekly",))
        assert feature_names(spec) == [
            "t", "s1", "s2",
            "cos(t;p=7,h=1)", "sin(t;p=7,h=1)",
            "cos(t;p=7,h=2)", "sin(t;p=7,h=2)",
            "cos(t;p=7,h=3)", "sin(t;p=7,h=3)",
        ]

    def test_default_harmonics_capped(self):
        spec = default_feature_spec(1, "Daily", effects=("Yearly",))
        assert spec.seasonal[0].harmonics == (1, 2, 3, 4)

    def test_undefined_effect_skipped(self):
        spec = default_feature_spec(1, "Monthly", effects=("Weekly", "Yearly"))
        assert [term.period for term in spec.seasonal] == [12]

    def test_bounds_from_coordinates(self):
        bounds = spatial_bounds_from(np.array([[0.0, 5.0], [2.0, 5.0]]))
        assert bounds == ((0.0, 2.0), (4.5, 5.5))

    def test_resolve_fills_bounds(self):
        spec = make_spec(spatial_fourier=((1,), (1,)))
        resolved = resolve_feature_spec(spec, np.array([[0.0, 0.0], [2.0, 4.0]]))
        assert resolved.spatial_bounds == ((0.0, 2.0), (0.0, 4.0))
        assert resolve_feature_spec(make_spec(), np.zeros((1, 2))).spatial_bounds is None

    def test_bounds_need_points(self):
        with pytest.raises(InputError):
            spatial_bounds_from(np.zeros((0, 2)))
