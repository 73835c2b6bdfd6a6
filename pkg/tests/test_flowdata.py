import datetime as dt
import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapcon.flowdata import (
    BENIGN,
    MALICIOUS,
    CategoricalFeatureModel,
    DatasetSplits,
    DriftSpec,
    FeatureDrift,
    FlowDataError,
    FlowRecord,
    FlowTable,
    InsufficientClassError,
    NumericFeatureModel,
    SplitConfig,
    balanced_sample,
    chronological_split,
    generate_drifted,
    kyoto_schema,
    load_kyoto,
    parse_kyoto,
    write_kyoto_lines,
)

SCHEMA = kyoto_schema()


def _line(label="1", n=24, ts="2007-01-01T00:00:00"):
    fields = ["0"] * n
    fields[1], fields[13] = "http", "SF"
    if n > 17:
        fields[17] = label
    if n > 22:
        fields[22] = ts
    return "\t".join(fields)


def test_parse_benign_line():
    table, errors = parse_kyoto([_line("1")], SCHEMA)
    assert errors == []
    assert len(table) == 1
    rec = table[0]
    assert isinstance(rec, FlowRecord)
    assert rec.label == BENIGN
    assert rec.numeric_values == (0.0,) * 12
    assert rec.categorical_values == ("http", "SF")


def test_parse_malicious_and_unknown_labels():
    table, _ = parse_kyoto([_line("-1"), _line("-2")], SCHEMA)
    assert list(table.labels) == [MALICIOUS, MALICIOUS]
    _, errors = parse_kyoto([_line("0")], SCHEMA)
    assert errors and "label" in errors[0][1]


def test_short_line_reports_field_count():
    _, errors = parse_kyoto(["", _line(n=23)], SCHEMA)
    assert errors == [(2, "field count 23 < 24")]


def test_time_of_day_needs_file_date(tmp_path):
    line = _line(ts="13:05:00")
    _, errors = parse_kyoto([line], SCHEMA)
    assert "file date" in errors[0][1]
    p = tmp_path / "20090102.txt.gz"
    with gzip.open(p, "wt") as fh:
        fh.write(line + "\n")
    table, errors = load_kyoto(tmp_path, SCHEMA)
    assert errors == []
    assert str(table.timestamps[0]) == "2009-01-02T13:05:00"


def _table(years, labels):
    ts = [np.datetime64(f"{y}-06-01T00:00:00") for y in years]
    n = len(years)
    return FlowTable(SCHEMA, ts, np.zeros((n, 12)), [["http", "SF"]] * n, labels)


def test_every_record_lands_in_one_range():
    years = list(range(2006, 2016)) * 40
    labels = [i % 2 for i in range(len(years))]
    splits = chronological_split(_table(years, labels), SplitConfig(test_per_class=10))
    tested = sum(len(t) for t in splits.tests().values())
    assert tested == 60
    assert set(splits.test_near.years()) <= {2011, 2012, 2013}
    assert set(splits.test_far.years()) <= {2014, 2015}
    train = FlowTable.concat([splits.pretrain_set, splits.finetune_set, splits.validation_set])
    assert set(train.years()) <= set(range(2006, 2011))
    # IID pool of 200 minus 20 held-out tests
    assert len(train) == 180


def test_nine_to_one_then_nine_to_one():
    years = [2006] * 100 + [2012] * 4 + [2015] * 4
    labels = [0, 1] * 50 + [0, 1] * 4
    # no IID test held out when test_per_class is 0
    splits = chronological_split(_table(years, labels), SplitConfig(test_per_class=0))
    assert (len(splits.pretrain_set), len(splits.finetune_set), len(splits.validation_set)) == (90, 9, 1)


def test_far_shortfall_names_range_and_class():
    years = [2006] * 20000 + [2012] * 20000 + [2015] * 10000
    labels = [0, 1] * 10000 + [0, 1] * 10000 + [0] * 6000 + [1] * 4000
    with pytest.raises(InsufficientClassError) as exc:
        chronological_split(_table(years, labels), SplitConfig(test_per_class=5000))
    assert exc.value.range_name == "FAR" and exc.value.class_name == "malicious"


def test_balanced_sample_examples():
    pool = _table([2006] * 13000, [0] * 7000 + [1] * 6000)
    out = balanced_sample(pool, 5000, seed=0)
    assert len(out) == 10000 and out.class_counts() == (5000, 5000)
    assert len(balanced_sample(pool, 0, seed=0)) == 0
    with pytest.raises(InsufficientClassError, match="malicious"):
        balanced_sample(_table([2006] * 13, [0] * 10 + [1] * 3), 5, seed=0)


def test_split_config_rejects_overlap():
    with pytest.raises(FlowDataError):
        SplitConfig(iid_range=(2006, 2011), near_range=(2011, 2013))


def test_splits_roundtrip(small_splits, tmp_path):
    small_splits.save(tmp_path)
    back = DatasetSplits.load(tmp_path)
    for name, t in small_splits.as_dict().items():
        u = back.as_dict()[name]
        np.testing.assert_array_equal(t.numeric, u.numeric)
        np.testing.assert_array_equal(t.labels, u.labels)
        np.testing.assert_array_equal(t.timestamps, u.timestamps)
        assert (t.categorical == u.categorical).all()


def test_kyoto_lines_roundtrip(small_table, tmp_path):
    p = tmp_path / "all.txt"
    with open(p, "w") as fh:
        write_kyoto_lines(small_table, fh)
    back, errors = load_kyoto(p, small_table.schema)
    assert errors == []
    np.testing.assert_array_equal(back.numeric, small_table.numeric)
    np.testing.assert_array_equal(back.labels, small_table.labels)


def test_split_is_deterministic(small_table):
    a = chronological_split(small_table, SplitConfig(test_per_class=150, seed=5))
    b = chronological_split(small_table, SplitConfig(test_per_class=150, seed=5))
    for name in a.as_dict():
        np.testing.assert_array_equal(a.as_dict()[name].numeric, b.as_dict()[name].numeric)


# ---------------------------------------------------------------------------
# drift generator
# ---------------------------------------------------------------------------

def _spec(shift=0.0, n=10000, scale=1.0):
    return DriftSpec(
        numeric=[NumericFeatureModel("a", loc=5.0, std=2.0, weight=1.0),
                 NumericFeatureModel("b", loc=0.0, std=1.0, weight=-1.0)],
        categorical=[CategoricalFeatureModel("c", ["x", "y"], {"x": 0.5})],
        schedules=[FeatureDrift("a", [0.0, 0.0, shift], [1.0, 1.0, scale])],
        n_periods=3, records_per_period=n, years=[2006, 2011, 2014], seed=3,
    )


def test_identity_schedule_gives_identical_periods():
    periods = generate_drifted(_spec(0.0, n=10000))
    base = periods[0][1]
    for _, t in periods[1:]:
        for name in ("a", "b"):
            x, y = base.column(name), t.column(name)
            se = np.sqrt(x.var() / x.size + y.var() / y.size)
            assert abs(x.mean() - y.mean()) < 4 * se
        assert abs(base.labels.mean() - t.labels.mean()) < 0.03
    # a period's stream depends only on (seed, period)
    again = generate_drifted(_spec(0.0, n=10000))
    for (_, t), (_, u) in zip(periods, again):
        np.testing.assert_array_equal(t.numeric, u.numeric)
        assert (t.categorical == u.categorical).all()


def test_three_sigma_shift_moves_mean():
    n = 10000
    periods = generate_drifted(_spec(3.0, n=n))
    a0 = periods[0][1].column("a")
    a2 = periods[2][1].column("a")
    sigma = 2.0
    assert abs((a2.mean() - a0.mean()) - 3 * sigma) <= 3 * sigma / np.sqrt(n)


def test_concept_is_fixed_under_shift():
    # labels come from the unshifted latents, so the class balance holds
    flat = generate_drifted(_spec(0.0, n=10000))
    shifted = generate_drifted(_spec(3.0, n=10000))
    np.testing.assert_array_equal(flat[2][1].labels, shifted[2][1].labels)
    np.testing.assert_array_equal(flat[0][1].numeric, shifted[0][1].numeric)
    assert not np.allclose(flat[2][1].column("a"), shifted[2][1].column("a"))


def test_zero_records_per_period():
    periods = generate_drifted(_spec(n=0))
    assert all(len(t) == 0 for _, t in periods)


def test_drift_spec_roundtrip():
    s = _spec(1.0, n=10)
    assert DriftSpec.from_dict(s.to_dict()) == s


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 200), st.integers(0, 2**31 - 1))
def test_balanced_sample_properties(per_class, seed):
    pool = _table([2006] * 400, [0] * 200 + [1] * 200)
    out = balanced_sample(pool, per_class, seed)
    assert out.class_counts() == (per_class, per_class)
    assert len(np.unique(out.timestamps.astype(np.int64) * 0 + np.arange(len(out)))) == len(out)


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 400), st.floats(0.05, 0.95))
def test_split_sizes_partition_training_pool(n, frac):
    years = [2006] * n + [2012] * 2 + [2015] * 2
    labels = [i % 2 for i in range(n)] + [0, 1, 0, 1]
    s = chronological_split(_table(years, labels), SplitConfig(test_per_class=0,
                                                               pretrain_fraction=frac))
    assert len(s.pretrain_set) + len(s.finetune_set) + len(s.validation_set) == n
    assert len(s.pretrain_set) == round(n * frac)
