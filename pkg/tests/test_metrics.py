import math

import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tscalib.core import ConfidenceLevels, ForecastWindow, QuantileForecast, QuantileLevels, UndefinedMetricError
from tscalib.metrics import (
    MetricRecord,
    aggregate,
    cce,
    coverages,
    mase,
    mean_sem,
    msis,
    pce,
    read_records_csv,
    score_window,
    siw,
    tailed,
    wql,
    write_aggregate_csv,
    write_records_csv,
)

Q = QuantileLevels()
S = ConfidenceLevels()


def fc_of(rows, levels=Q, origin=0, sid="s"):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return QuantileForecast(rows, levels, window=ForecastWindow(sid, origin, 1, rows.shape[0]))


def random_instance(rng):
    h = int(rng.integers(2, 17))
    y = rng.normal(size=h) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
    rows = np.sort(rng.normal(size=(h, 9)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5), axis=1)
    if rng.uniform() < 0.3:
        # exact ties on quantile values exercise the <= conventions
        t = rng.integers(0, h, size=max(1, h // 3))
        y[t] = rows[t, rng.integers(0, 9, size=t.size)]
    return rows, y


def rel_close(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=tol, abs_tol=1e-300) or abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


# -- oracle equivalence ------------------------------------------------------------------


def test_metrics_match_longhand_oracle():
    rng = np.random.default_rng(20240601)
    lv, conf = list(Q.levels), list(S.levels)
    for _ in range(1000):
        rows, y = random_instance(rng)
        fc, rl, yl = fc_of(rows), rows.tolist(), y.tolist()
        tp, tc = tailed(fc, y)
        pairs = [
            (pce(fc, y), oracles.pce(rl, lv, yl)),
            (cce(fc, y), oracles.cce(rl, lv, yl, conf)),
            (mase(fc.median, y), oracles.mase(oracles.col(rl, lv, 0.5), yl)),
            (wql(fc, y), oracles.wql(rl, lv, yl)),
            (msis(fc, y), oracles.msis(rl, lv, yl)),
            (tp, oracles.pce(rl, lv, yl, use=[0.1, 0.9])),
            (tc, oracles.cce(rl, lv, yl, [0.8])),
        ]
        if np.ptp(y) > 0:
            pairs.append((siw(fc, y), oracles.siw(rl, lv, yl, conf)))
        for got, want in pairs:
            assert rel_close(got, want), (got, want)


# -- PCE --------------------------------------------------------------------------------


def test_pce_exact_fraction_match_is_zero():
    y = np.arange(1.0, 11.0)
    rows = np.array([[10 * q + 0.5 for q in Q] for _ in y])
    assert pce(fc_of(rows), y) == 0.0


def test_pce_all_below_is_half():
    y = np.arange(1.0, 11.0) + 100
    rows = np.tile(np.linspace(-1, 1, 9), (10, 1))
    assert pce(fc_of(rows), y) == 0.5


def test_pce_single_level_hand_count():
    lv = QuantileLevels((0.5,))
    assert pce(fc_of([[0.0], [0.0], [0.0], [10.0]], lv), [1, 2, 3, 4]) == 0.25


def test_pce_missing_level_raises():
    with pytest.raises((KeyError, ValueError)):
        pce(fc_of([[0.0, 1.0, 2.0]], QuantileLevels((0.1, 0.5, 0.9))), [1.0], QuantileLevels((0.2,)))


# -- CCE --------------------------------------------------------------------------------


def test_cce_full_and_zero_coverage():
    y = np.zeros(5)
    wide = np.tile(np.linspace(-10, 10, 9), (5, 1))
    assert cce(fc_of(wide), y) == pytest.approx(-0.5)
    off = wide + 100
    assert cce(fc_of(off), y) == pytest.approx(0.5)


def test_cce_hand_count():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    rows = [[0, 1, 2]] * 4
    assert cce(fc_of(rows, lv), [1, 1, 2, 3], ConfidenceLevels((0.8,))) == pytest.approx(0.05)


def test_cce_closed_interval_counts_bounds():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    assert coverages(fc_of([[1, 2, 3]] * 2, lv), [1, 3], ConfidenceLevels((0.8,)))[0] == 1.0


# -- SIW --------------------------------------------------------------------------------


def test_siw_two_point_example():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    rows = [[0, 2, 4], [0, 2, 4]]
    assert siw(fc_of(rows, lv), [0, 10], ConfidenceLevels((0.8,))) == pytest.approx(0.5)


def test_siw_equal_to_realized_spread_is_one():
    rng = np.random.default_rng(3)
    y = rng.normal(size=12)
    qs = np.array([oracles.quantile7(y.tolist(), q) for q in Q])
    assert siw(fc_of(np.tile(qs, (12, 1))), y) == pytest.approx(1.0)


def test_siw_constant_targets_undefined():
    with pytest.raises(UndefinedMetricError):
        siw(fc_of(np.tile(np.linspace(0, 1, 9), (3, 1))), [2.0, 2.0, 2.0])


def test_siw_reference_sample():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    rows = [[0, 2, 4], [0, 2, 4]]
    assert siw(fc_of(rows, lv), [0, 10], ConfidenceLevels((0.8,)), reference=[0, 20]) == pytest.approx(0.25)


# -- MASE / WQL / MSIS ----------------------------------------------------------------------


def test_mase_examples():
    assert mase([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert mase([2, 2, 2, 2], [1, 2, 3, 4]) == 1.0
    with pytest.raises(UndefinedMetricError):
        mase([1, 1], [5, 5])
    with pytest.raises(ValueError):
        mase([1], [1])


def test_wql_examples():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    assert wql(fc_of([[8, 10, 12]], lv), [10]) == pytest.approx(0.08)
    assert wql(fc_of([[3, 3, 3], [4, 4, 4]], lv), [3, 4]) == 0.0
    with pytest.raises(UndefinedMetricError):
        wql(fc_of([[-1, 0, 1]], lv), [0.0])


def test_msis_example():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    rows = [[0, 2, 4], [0, 2, 4]]
    assert msis(fc_of(rows, lv), [2, 6]) == pytest.approx(3.5)


def test_msis_inside_is_width_over_scale_and_linear_in_width():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    y = [1.0, 2.0, 1.5]
    base = msis(fc_of([[0, 1, 3]] * 3, lv), y)
    assert base == pytest.approx(3 / 0.75)
    wider = msis(fc_of([[0, 1, 3.5]] * 3, lv), y)
    assert wider - base == pytest.approx(0.5 / 0.75)


def test_tailed_examples():
    lv = QuantileLevels((0.1, 0.5, 0.9))
    y = np.arange(10.0)
    rows = np.tile([1.5, 5.0, 8.5], (10, 1))  # 2 below 0.1-quantile, 9 below 0.9-quantile
    tp, tc = tailed(fc_of(rows, lv), y)
    assert tp == pytest.approx(0.05)
    wide = np.tile([-100.0, 0.0, 100.0], (10, 1))
    assert tailed(fc_of(wide, lv), y)[1] == pytest.approx(-0.2)


# -- properties ---------------------------------------------------------------------------


@st.composite
def instances(draw):
    h = draw(st.integers(2, 12))
    y = draw(st.lists(st.floats(-50, 50, allow_nan=False), min_size=h, max_size=h))
    rows = [sorted(draw(st.lists(st.floats(-50, 50, allow_nan=False), min_size=9, max_size=9))) for _ in range(h)]
    return np.array(rows), np.array(y)


@settings(max_examples=150)
@given(instances())
def test_bounds_under_default_levels(inst):
    rows, y = inst
    fc = fc_of(rows)
    assert 0 <= pce(fc, y) <= 0.5
    assert -0.5 <= cce(fc, y) <= 0.5
    assert wql(fc, y) >= 0 if np.any(y != 0) else True


@settings(max_examples=150)
@given(instances())
def test_indicator_metrics_invariant_under_monotone_transform(inst):
    rows, y = inst
    f = lambda v: np.sinh(v / 10) * 3 + np.cbrt(v)  # noqa: E731 strictly increasing
    a, b = fc_of(rows), fc_of(f(rows))
    assert pce(a, y) == pce(b, f(y))
    assert cce(a, y) == cce(b, f(y))
    assert tailed(a, y) == tailed(b, f(y))


@settings(max_examples=150)
@given(instances(), st.floats(0.01, 100), st.floats(-100, 100))
def test_scale_and_shift_invariance(inst, c, b):
    rows, y = inst
    a, sc = fc_of(rows), fc_of(c * rows)
    if np.min(np.abs(np.diff(y))) > 1e-6:
        assert mase(sc.median, c * y) == pytest.approx(mase(a.median, y), rel=1e-9)
        assert mase(a.median + b, y + b) == pytest.approx(mase(a.median, y), rel=1e-6, abs=1e-9)
    try:
        base = siw(a, y)
    except UndefinedMetricError:
        base = None
    if base is not None:
        assert siw(sc, c * y) == pytest.approx(base, rel=1e-9)
    if np.sum(np.abs(y)) > 1e-6:
        assert wql(sc, c * y) == pytest.approx(wql(a, y), rel=1e-9)


@settings(max_examples=150)
@given(instances())
def test_coverage_from_below_fractions_when_no_ties(inst):
    rows, y = inst
    if np.any(np.isin(y, rows)):
        return
    fc = fc_of(rows)
    frac = [(y <= rows[:, j]).mean() for j in (0, 8)]
    assert coverages(fc, y, ConfidenceLevels((0.8,)))[0] == pytest.approx(frac[1] - frac[0])


# -- records and aggregation ----------------------------------------------------------------


def rec(sid, pce_v, dataset="d", model="m", siw_v=1.0, below=None):
    lv = tuple(Q.levels)
    return MetricRecord(
        series_id=sid, origin=0, pce=pce_v, cce=0.0, siw=siw_v, mase=1.0, wql=0.5, msis=2.0, tpce=0.0, tcce=0.0,
        dataset=dataset, model=model, levels=lv, below=below or lv, confidences=S.levels, cover=S.levels,
    )


def test_score_window_marks_undefined_as_nan():
    y = np.full(4, 3.0)
    r = score_window(fc_of(np.tile(np.linspace(2, 4, 9), (4, 1))), y)
    assert math.isnan(r.siw) and math.isnan(r.mase) and math.isnan(r.msis)
    assert not math.isnan(r.pce)


def test_aggregate_single_series_sem_zero():
    (rep,) = aggregate([rec("a", 0.1), rec("a", 0.3)], pooling="window_mean")
    assert rep.stats["pce"].mean == pytest.approx(0.2)
    assert rep.stats["pce"].sem == 0.0


def test_aggregate_two_series_mean_and_sem():
    (rep,) = aggregate([rec("a", 0.1), rec("b", 0.3)], pooling="window_mean")
    assert rep.stats["pce"].mean == pytest.approx(0.2)
    assert rep.stats["pce"].sem == pytest.approx(0.1)


def test_aggregate_excludes_undefined_and_counts():
    (rep,) = aggregate([rec("a", 0.1, siw_v=math.nan), rec("b", 0.3, siw_v=math.nan)])
    assert rep.stats["siw"].missing and rep.stats["siw"].excluded == 2
    assert not rep.stats["pce"].missing


def test_pooled_pce_uses_pooled_fractions():
    lv = Q.levels
    hi = tuple(q + 0.1 for q in lv)
    lo = tuple(q - 0.1 for q in lv)
    recs = [rec("a", 0.1, below=hi), rec("a", 0.1, below=lo)]
    (pooled,) = aggregate(recs, pooling="pooled")
    (wm,) = aggregate(recs, pooling="window_mean")
    assert wm.stats["pce"].mean == pytest.approx(0.1)
    # the two windows err in opposite directions and cancel once pooled
    assert pooled.stats["pce"].mean == pytest.approx(0.0, abs=1e-15)


def test_mean_sem():
    assert mean_sem([]) == (pytest.approx(math.nan, nan_ok=True), pytest.approx(math.nan, nan_ok=True))
    assert mean_sem([2.0]) == (2.0, 0.0)


def test_records_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    recs = []
    for i in range(5):
        rows, y = random_instance(rng)
        recs.append(score_window(fc_of(rows, origin=i, sid=f"s{i % 2}"), y, dataset="d", model="m"))
    recs[0].siw = math.nan
    p = tmp_path / "r.csv"
    write_records_csv(p, recs)
    back = read_records_csv(p)
    for a, b in zip(recs, back):
        for f in ("series_id", "origin", "pce", "cce", "mase", "wql", "msis", "tpce", "tcce", "below", "cover"):
            assert getattr(a, f) == getattr(b, f)
        assert (math.isnan(a.siw) and math.isnan(b.siw)) or a.siw == b.siw
    write_aggregate_csv(tmp_path / "a.csv", aggregate(back))
    assert (tmp_path / "a.csv").read_text().startswith("dataset,model,metric,mean,sem")


def test_records_csv_mixed_level_sets(tmp_path):
    rng = np.random.default_rng(6)
    rows, y = random_instance(rng)
    wide = QuantileLevels((0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95))
    a = score_window(fc_of(rows, origin=0, sid="s"), y, dataset="d", model="m")
    wide_rows = np.hstack([rows[:, :1] - 1, rows, rows[:, -1:] + 1])
    b = score_window(QuantileForecast(wide_rows, wide), y, dataset="d", model="w")
    p = tmp_path / "r.csv"
    write_records_csv(p, [a, b])
    back = read_records_csv(p)
    assert back[0].levels == a.levels and back[0].below == a.below
    assert back[1].levels == b.levels and back[1].below == b.below
    for x, y_ in zip(aggregate(back), aggregate([a, b])):
        assert x.stats["pce"].mean == y_.stats["pce"].mean
