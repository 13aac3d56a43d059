import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tscalib.core import (
    ConfidenceLevels,
    CsvSchema,
    DataError,
    EmptyProtocolError,
    FormatError,
    ForecastWindow,
    ParseError,
    QuantileForecast,
    QuantileLevels,
    SchemaError,
    TimeSeries,
    empirical_quantile,
    load_series_csv,
    read_forecasts,
    rolling_windows,
    write_forecasts,
    write_series_csv,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def type7(data, p):
    """Order-statistic interpolation at h = (n - 1) p, written out longhand."""
    x = sorted(data)
    h = (len(x) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


# -- types ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "values, stamps",
    [([], None), ([1.0, np.nan], None), ([1.0, 2.0], (2, 1)), ([1.0, 2.0], (1,))],
)
def test_time_series_invariants(values, stamps):
    with pytest.raises((ValueError, DataError)):
        TimeSeries("a", values, timestamps=stamps)


def test_time_series_values_are_read_only():
    s = TimeSeries("a", [1.0, 2.0])
    with pytest.raises(ValueError):
        s.values[0] = 5.0


def test_default_level_sets():
    assert QuantileLevels().levels == pytest.approx((0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9))
    assert ConfidenceLevels().levels == (0.2, 0.4, 0.6, 0.8)
    assert ConfidenceLevels().bounds(0.8) == pytest.approx((0.1, 0.9))


@pytest.mark.parametrize("bad", [(0.5, 0.5), (0.0, 0.5), (0.5, 1.0), (0.6, 0.4), ()])
def test_quantile_levels_invalid(bad):
    with pytest.raises(ValueError):
        QuantileLevels(bad)


def test_confidence_levels_must_be_covered():
    with pytest.raises(ValueError):
        ConfidenceLevels((0.5,)).check_against(QuantileLevels())
    ConfidenceLevels((0.8,)).check_against(QuantileLevels((0.1, 0.5, 0.9)))


def test_levels_parse():
    assert QuantileLevels.parse("0.1, 0.5,0.9").levels == (0.1, 0.5, 0.9)


def test_forecast_validation():
    with pytest.raises(FormatError):
        QuantileForecast(np.zeros((3, 2)))
    with pytest.raises(FormatError):
        QuantileForecast(np.full((1, 9), np.inf))
    with pytest.raises(FormatError):
        QuantileForecast(np.zeros((3, 9)), window=ForecastWindow("a", 5, 2, 4))


def test_forecast_repair_sorts_rows_and_flags():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    fc = QuantileForecast.repaired([[3.0, 2.0, 1.0], [1.0, 2.0, 3.0]], lv)
    assert fc.crossing_repaired
    np.testing.assert_array_equal(fc.values, [[1, 2, 3], [1, 2, 3]])
    assert not QuantileForecast.repaired([[1.0, 2.0, 3.0]], lv).crossing_repaired


# -- empirical quantile -----------------------------------------------------------------


def test_empirical_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4], 0.5) == 2.5
    assert empirical_quantile([0, 10], 0.1) == pytest.approx(1.0)
    assert empirical_quantile([0, 10], 0.9) == pytest.approx(9.0)
    assert empirical_quantile([7], 0.3) == 7
    assert empirical_quantile([3, 1, 2], 0) == 1
    assert empirical_quantile([3, 1, 2], 1) == 3


def test_empirical_quantile_errors():
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)
    with pytest.raises(ValueError):
        empirical_quantile([1.0, np.nan], 0.5)
    with pytest.raises(ValueError):
        empirical_quantile([1.0], 1.5)


def test_empirical_quantile_vector_levels_last_axis():
    data = np.arange(20.0).reshape(2, 10)
    out = empirical_quantile(data, [0.1, 0.5])
    assert out.shape == (2, 2)
    assert out[1, 1] == pytest.approx(type7(data[1], 0.5))


@given(st.lists(finite, min_size=1, max_size=30), st.floats(0, 1))
def test_empirical_quantile_matches_longhand(data, p):
    assert empirical_quantile(data, p) == pytest.approx(type7(data, p), rel=1e-12, abs=1e-9)


@given(st.lists(finite, min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_empirical_quantile_monotone_in_p(data, p1, p2):
    lo, hi = sorted((p1, p2))
    assert empirical_quantile(data, lo) <= empirical_quantile(data, hi) + 1e-9


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
    st.floats(0, 1),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_empirical_quantile_affine_equivariance(data, p, a, b):
    x = np.asarray(data)
    assert empirical_quantile(a * x + b, p) == pytest.approx(a * empirical_quantile(x, p) + b, rel=1e-9, abs=1e-6)


# -- rolling windows ------------------------------------------------------------------


def test_rolling_windows_examples():
    s = TimeSeries("a", np.arange(20.0))
    assert [w.origin for w in rolling_windows(s, 10, 4, 4, 4)] == [9, 13]
    s12 = TimeSeries("b", np.arange(12.0))
    assert [w.origin for w in rolling_windows(s12, 10, 4, 1, 1)] == [9, 10]


def test_rolling_windows_slices():
    s = TimeSeries("a", np.arange(20.0))
    w = rolling_windows(s, 10, 4, 4, 4)[0]
    np.testing.assert_array_equal(w.context(s), [6, 7, 8, 9])
    np.testing.assert_array_equal(w.targets(s), [10, 11, 12, 13])


def test_rolling_windows_empty_protocol():
    s = TimeSeries("a", np.arange(12.0))
    with pytest.raises(EmptyProtocolError):
        rolling_windows(s, 10, 4, 5, 1)
    with pytest.raises(EmptyProtocolError):
        rolling_windows(s, 3, 4, 1, 1)
    assert issubclass(EmptyProtocolError, DataError)


@given(
    n=st.integers(10, 200),
    split_frac=st.floats(0.2, 0.8),
    ctx=st.integers(1, 10),
    horizon=st.integers(1, 20),
    stride=st.integers(1, 9),
)
def test_rolling_windows_protocol(n, split_frac, ctx, horizon, stride):
    split = max(ctx, int(n * split_frac))
    s = TimeSeries("a", np.arange(float(n)))
    if split - 1 > n - 1 - horizon:
        with pytest.raises(EmptyProtocolError):
            rolling_windows(s, split, ctx, horizon, stride)
        return
    ws = rolling_windows(s, split, ctx, horizon, stride)
    origins = [w.origin for w in ws]
    assert origins[0] == split - 1
    assert all(b - a == stride for a, b in zip(origins, origins[1:]))
    assert origins[-1] + stride + horizon > n - 1
    for w in ws:
        idx = np.arange(n)[w.target_slice]
        assert idx.size == horizon and idx.min() >= split and idx.max() <= n - 1
        assert w.context(s).size == ctx


# -- CSV --------------------------------------------------------------------------------


def test_load_series_csv_groups_by_id(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,value\na,1.0\na,2.0\nb,5.0\n")
    a, b = load_series_csv(p)
    assert (a.id, len(a), b.id, len(b)) == ("a", 2, "b", 1)


def test_load_series_csv_parse_error_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,value\na,1.0\na,x\n")
    with pytest.raises(ParseError) as e:
        load_series_csv(p)
    assert e.value.row == 3
    assert "row 3" in str(e.value)


def test_load_series_csv_missing_column(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,val\na,1.0\n")
    with pytest.raises(SchemaError):
        load_series_csv(p)


def test_load_series_csv_orders_by_timestamp(tmp_path):
    p = tmp_path / "s.csv"
    stamps = [5, 2, 9, 1, 3]
    vals = [50.0, 20.0, 90.0, 10.0, 30.0]
    p.write_text("id,value,ts\n" + "".join(f"a,{v},{t}\n" for v, t in zip(vals, stamps)))
    (s,) = load_series_csv(p, schema=CsvSchema(timestamp="ts"))
    order = sorted(range(5), key=lambda i: stamps[i])
    np.testing.assert_array_equal(s.values, [vals[i] for i in order])
    assert s.timestamps == tuple(sorted(stamps))


def test_series_csv_round_trip(tmp_path):
    p = tmp_path / "s.csv"
    rng = np.random.default_rng(1)
    series = [TimeSeries("x", rng.normal(size=7)), TimeSeries("y", rng.normal(size=3))]
    write_series_csv(p, series)
    back = load_series_csv(p)
    for a, b in zip(series, back):
        assert a.id == b.id
        np.testing.assert_array_equal(a.values, b.values)


# -- forecast files ---------------------------------------------------------------------


def test_forecast_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    vals = np.sort(rng.normal(size=(5, 9)) * 1e-3 + 1 / 3, axis=1)
    fc = QuantileForecast(vals, window=ForecastWindow("s", 10, 1, 5), provenance={"strategy": "naive"})
    p = tmp_path / "f.jsonl"
    write_forecasts(p, [fc])
    (back,) = read_forecasts(p)
    assert back.values.tobytes() == fc.values.tobytes()
    assert back.window.series_id == "s" and back.window.origin == 10
    assert json.loads(p.read_text())["strategy"] == "naive"


def test_forecast_file_repairs_crossing(tmp_path):
    p = tmp_path / "f.jsonl"
    p.write_text(json.dumps({"series_id": "s", "origin": 0, "levels": [0.1, 0.5, 0.9], "values": [[3, 2, 1]]}) + "\n")
    (fc,) = read_forecasts(p)
    assert fc.crossing_repaired
    np.testing.assert_array_equal(fc.values, [[1, 2, 3]])


@pytest.mark.parametrize(
    "values",
    [
        [[float(i) for i in range(9)]],  # 8 levels declared, 9 values per row
        [[1.0] * 8, [1.0] * 7],  # ragged
    ],
)
def test_forecast_file_format_errors(tmp_path, values):
    p = tmp_path / "f.jsonl"
    levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    p.write_text(json.dumps({"series_id": "s", "origin": 0, "levels": levels, "values": values}) + "\n")
    with pytest.raises(FormatError):
        read_forecasts(p)


@settings(max_examples=50)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=6))
def test_forecast_file_round_trip_property(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("fc") / "f.jsonl"
    fc = QuantileForecast.repaired(rows, QuantileLevels((0.1, 0.5, 0.9)), window=ForecastWindow("s", 3, 1, len(rows)))
    write_forecasts(p, [fc])
    (back,) = read_forecasts(p)
    assert back.values.tobytes() == fc.values.tobytes()
