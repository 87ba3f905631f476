"""
Unit tests for table loading, time encoding and train/test splits.
"""

import logging
from datetime import datetime

import numpy as np
import pytest

from data import (
    Dataset,
    decode_time,
    encode,
    export_table,
    load_table,
    make_splits,
    plan_splits,
    table_to_text,
    time_index,
)
from errors import InputError
from models import DataSchema

HEADER = "location,lon,lat,timestamp,value\n"


def write_csv(tmp_path, rows: str, name: str = "obs.csv", header: str = HEADER) -> str:
    path = tmp_path / name
    path.write_text(header + rows)
    return str(path)


def make_dataset(n_locations: int = 4, n_times: int = 10, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 10, size=(n_locations, 2))
    space = np.repeat(coords, n_times, axis=0)
    time = np.tile(np.arange(n_times, dtype=float), n_locations)
    ids = np.repeat([f"L{i}" for i in range(n_locations)], n_times)
    values = rng.normal(size=n_locations * n_times)
    return Dataset.from_arrays(space, time, values, location_ids=ids, origin=datetime(2020, 1, 1), frequency="Daily")


def record_keys(dataset: Dataset) -> set:
    return {(dataset.location_ids[i], float(t)) for i, t in zip(dataset.location_index, dataset.time)}


class TestLoadTable:
    def test_single_row(self, tmp_path):
        table = load_table(write_csv(tmp_path, "A,1.0,2.0,2020-01-01,3.5\n"), DataSchema())
        assert len(table) == 1
        assert table.values[0] == 3.5

    def test_duplicate_key_names_both_lines(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,2020-01-01,1\nB,3,4,2020-01-01,2\nA,1,2,2020-01-01,5\n")
        with pytest.raises(InputError, match="lines 2 and 4"):
            load_table(path, DataSchema())

    def test_empty_value_is_missing(self, tmp_path):
        table = load_table(write_csv(tmp_path, "A,1,2,2020-01-01,\nA,1,2,2020-01-02,NA\n"), DataSchema())
        assert len(table) == 2
        assert np.all(np.isnan(table.values))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="nope.csv"):
            load_table(str(tmp_path / "nope.csv"), DataSchema())

    def test_bad_number_reports_line(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,2020-01-01,1\nA,1,x,2020-01-02,2\n")
        with pytest.raises(InputError, match=":3: invalid lat"):
            load_table(path, DataSchema())

    def test_bad_timestamp_reports_line(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,yesterday,1\n")
        with pytest.raises(InputError, match=":2: invalid timestamp"):
            load_table(path, DataSchema())

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2020-01-01,1\n", header="location,lon,timestamp,value\n")
        with pytest.raises(InputError, match="missing columns"):
            load_table(path, DataSchema())

    def test_varying_coordinates(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,2020-01-01,1\nA,1,2.5,2020-01-02,1\n")
        with pytest.raises(InputError, match="varying coordinates"):
            load_table(path, DataSchema())

    def test_query_table_without_values(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,2020-01-05\n", header="location,lon,lat,timestamp\n")
        table = load_table(path, DataSchema(), require_value=False)
        assert not table.has_values
        assert table.timestamps == [datetime(2020, 1, 5)]

    def test_custom_schema(self, tmp_path):
        schema = DataSchema(location_column="site", coordinate_columns=("x",), time_column="when",
                            value_column="y", delimiter=";")
        path = write_csv(tmp_path, "s1;0.5;2021-03-01;4\n", header="site;x;when;y\n")
        table = load_table(path, schema)
        assert table.coordinates.tolist() == [[0.5]]

    def test_timezone_normalized_to_utc(self, tmp_path):
        path = write_csv(tmp_path, "A,1,2,2020-01-01T02:00:00+02:00,1\n")
        assert load_table(path, DataSchema()).timestamps == [datetime(2020, 1, 1)]


class TestEncode:
    def test_consecutive_days(self, tmp_path):
        rows = "A,0,0,2020-01-01,1\nA,0,0,2020-01-02,2\nA,0,0,2020-01-03,3\n"
        dataset = encode(load_table(write_csv(tmp_path, rows), DataSchema()))
        assert sorted(dataset.time.tolist()) == [0.0, 1.0, 2.0]
        assert dataset.origin == datetime(2020, 1, 1)

    def test_weekly_gap_preserved(self, tmp_path):
        rows = "A,0,0,2020-01-06,1\nA,0,0,2020-01-13,2\nA,0,0,2020-01-27,3\n"
        dataset = encode(load_table(write_csv(tmp_path, rows), DataSchema(frequency="Weekly")))
        assert sorted(dataset.time.tolist()) == [0.0, 1.0, 3.0]

    def test_monthly_steps(self, tmp_path):
        rows = "A,0,0,2020-01-01,1\nA,0,0,2020-02-01,2\nA,0,0,2020-04-01,3\n"
        dataset = encode(load_table(write_csv(tmp_path, rows), DataSchema(frequency="Monthly")))
        assert sorted(dataset.time.tolist()) == [0.0, 1.0, 3.0]

    def test_hourly_declared_daily(self, tmp_path):
        rows = "A,0,0,2020-01-01T00:00:00,1\nA,0,0,2020-01-01T01:00:00,2\n"
        with pytest.raises(InputError, match="off the Daily grid"):
            encode(load_table(write_csv(tmp_path, rows), DataSchema()))

    def test_missing_rows_dropped_locations_kept(self, tmp_path):
        rows = "A,0,0,2020-01-01,1\nB,1,1,2020-01-01,\nB,1,1,2020-01-02,NA\n"
        dataset = encode(load_table(write_csv(tmp_path, rows), DataSchema()))
        assert len(dataset) == 1
        assert dataset.location_ids == ("A", "B")
        assert dataset.location_coords.tolist() == [[0.0, 0.0], [1.0, 1.0]]

    def test_explicit_origin(self, tmp_path):
        rows = "A,0,0,2020-01-05,1\n"
        dataset = encode(load_table(write_csv(tmp_path, rows), DataSchema()), origin=datetime(2020, 1, 1))
        assert dataset.time.tolist() == [4.0]

    def test_export_round_trip(self, tmp_path):
        rows = "A,0.25,1.5,2020-01-01,1.125\nB,2,3,2020-01-02,-4\nB,2,3,2020-01-04,\nA,0.25,1.5,2020-01-03,7\n"
        schema = DataSchema()
        dataset = encode(load_table(write_csv(tmp_path, rows), schema))
        text = table_to_text(export_table(dataset, schema))
        again = encode(load_table(write_csv(tmp_path, text, name="again.csv", header=""), schema))
        assert record_keys(again) == record_keys(dataset)
        assert sorted(again.values.tolist()) == sorted(dataset.values.tolist())
        assert "2020-01-03" in text


class TestTimeIndex:
    def test_fixed_units(self):
        assert time_index(datetime(2020, 1, 1, 6), datetime(2020, 1, 1), "Hourly") == 6
        assert time_index(datetime(2019, 12, 30), datetime(2020, 1, 1), "Daily") == -2

    def test_decode_inverts(self):
        origin = datetime(2020, 1, 31)
        for frequency in ("Daily", "Weekly", "Quarterly", "Yearly"):
            stamp = decode_time(origin, 5, frequency)
            assert time_index(stamp, origin, frequency) == 5

    def test_off_grid_month(self):
        with pytest.raises(InputError):
            time_index(datetime(2020, 2, 15), datetime(2020, 1, 1), "Monthly")


class TestSplits:
    def test_two_locations_two_splits(self):
        dataset = make_dataset(n_locations=2, n_times=10)
        splits = make_splits(dataset, 2, holdout_fraction=0.10, seed=0)
        tested = []
        for train, test in splits:
            assert len(test) == 1
            assert len(train) == 19
            assert test.time[0] == 9.0
            tested.append(test.location_ids[test.location_index[0]])
        assert sorted(tested) == ["L0", "L1"]

    def test_zero_holdout(self):
        for train, test in make_splits(make_dataset(), 2, holdout_fraction=0.0):
            assert len(test) == 0
            assert len(train) == 40

    def test_partition_of_records(self):
        dataset = make_dataset(n_locations=5, n_times=12)
        for train, test in make_splits(dataset, 3, holdout_fraction=0.25, seed=4):
            assert len(train) + len(test) == len(dataset)
            assert record_keys(train) | record_keys(test) == record_keys(dataset)
            assert not record_keys(train) & record_keys(test)

    def test_test_records_are_latest(self):
        dataset = make_dataset(n_locations=6, n_times=8)
        for train, test in make_splits(dataset, 3, holdout_fraction=0.3, seed=2):
            for loc in set(test.location_index.tolist()):
                latest_train = train.time[train.location_index == loc].max()
                assert test.time[test.location_index == loc].min() > latest_train
                assert np.sum(test.location_index == loc) == 3

    def test_each_location_tested_once(self):
        dataset = make_dataset(n_locations=7, n_times=5)
        tested = []
        for _, test in make_splits(dataset, 3, seed=9):
            tested.extend(test.location_ids[i] for i in set(test.location_index.tolist()))
        assert sorted(tested) == sorted(dataset.location_ids)

    def test_partition_sizes(self):
        plan = plan_splits(make_dataset(n_locations=7), 3, seed=1)
        sizes = sorted(list(plan.assignment.values()).count(k) for k in range(3))
        assert sizes == [2, 2, 3]

    def test_deterministic_by_seed(self):
        dataset = make_dataset(n_locations=8)
        assert plan_splits(dataset, 4, seed=5) == plan_splits(dataset, 4, seed=5)
        assert plan_splits(dataset, 4, seed=5) != plan_splits(dataset, 4, seed=6)

    def test_too_many_splits(self):
        with pytest.raises(InputError):
            make_splits(make_dataset(n_locations=2), 3)

    def test_sparse_location_stays_in_train(self, caplog):
        dataset = Dataset.from_arrays(
            space=[[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]],
            time=[0.0, 0.0, 1.0],
            values=[1.0, 2.0, 3.0],
            location_ids=["lonely", "busy", "busy"],
        )
        with caplog.at_level(logging.WARNING):
            splits = make_splits(dataset, 2, holdout_fraction=0.5, seed=0)
        assert sum(len(test) for _, test in splits) == 1
        assert "lonely" in caplog.text
