import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.tsa.stattools import pacf as sm_pacf

from tscalib.core import TimeSeries
from tscalib.streams import RandomStream
from tscalib.synthgen import SynthSpec, autocovariance, generate, generate_suite, pacf, write_features_csv


def acf1(y):
    d = y - y.mean()
    return float(d[:-1] @ d[1:] / (d @ d))


# -- spec validation ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="nope"),
        dict(split=0),
        dict(split=4367),
        dict(alpha=1.0),
        dict(alpha=-1.2),
        dict(kind="iid_student_t", df=2.0),
        dict(kind="latent_regression", noise="cauchy"),
        dict(period=0),
    ],
)
def test_invalid_spec_raises(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_defaults():
    s = SynthSpec()
    assert (s.kind, s.length, s.split, s.alpha, s.df) == ("ar1", 4367, 1440, 0.9, 3.0)


# -- generators ---------------------------------------------------------------------------


def test_same_seed_same_series():
    a = generate(SynthSpec(seed=11)).series.values
    b = generate(SynthSpec(seed=11)).series.values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate(SynthSpec(seed=12)).series.values)


def test_ar1_follows_recursion():
    y = generate(SynthSpec(length=50, split=10)).series.values
    e = RandomStream(0, "ar1", "eps").normal(50)
    np.testing.assert_allclose(y[1:], 0.9 * y[:-1] + 0.1 * e[1:], rtol=0, atol=1e-15)
    assert y[0] == pytest.approx(np.sqrt(0.01 / 0.19) * e[0])


def test_ar1_lag1_autocorrelation():
    y = generate(SynthSpec()).series.values
    assert acf1(y) == pytest.approx(0.9, abs=0.03)


def test_ar1_alpha_zero_is_white():
    y = generate(SynthSpec(alpha=0.0)).series.values
    assert abs(acf1(y)) <= 2 / np.sqrt(y.size)
    # same stream, no recursion: identical to the Gaussian generator
    np.testing.assert_array_equal(y, RandomStream(0, "ar1", "eps").normal(4367))


@pytest.mark.parametrize("seed", range(3))
def test_ar1_stationary_variance(seed):
    spec = SynthSpec(seed=seed)
    y = generate(spec).series.values
    want = (1 - 0.9) ** 2 / (1 - 0.81)
    assert spec.ar1_stationary_var() == pytest.approx(want)
    assert np.var(y) == pytest.approx(want, rel=0.10)


def test_iid_generators_moments():
    g = generate(SynthSpec(kind="iid_gauss", length=20000, split=10)).series.values
    assert abs(g.mean()) < 0.03 and np.std(g) == pytest.approx(1.0, abs=0.03)
    t = generate(SynthSpec(kind="iid_student_t", df=5.0, scale=2.0, length=20000, split=10)).series.values
    assert np.var(t) == pytest.approx(4.0 * 5 / 3, rel=0.1)


def test_seasonal_shape():
    y = generate(SynthSpec(kind="seasonal", period=12, amplitude=2.0, noise_sd=0.0, length=48, split=24)).series.values
    np.testing.assert_allclose(y, 2.0 * np.sin(2 * np.pi * np.arange(48) / 12), atol=1e-12)


def test_latent_regression_outputs():
    d = generate(SynthSpec(kind="latent_regression", n_features=3, length=500, split=100, noise="gaussian", scale=1e-9))
    assert d.features.shape == (500, 3)
    assert d.features.min() >= -1 and d.features.max() <= 1
    np.testing.assert_allclose(d.series.values, d.features @ d.weights[:-1] + d.weights[-1], atol=1e-7)


def test_features_sidecar_csv(tmp_path):
    d = generate(SynthSpec(kind="latent_regression", n_features=2, length=20, split=10))
    p = tmp_path / "f.csv"
    write_features_csv(p, d.features)
    back = np.loadtxt(p, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, d.features)
    assert p.read_text().splitlines()[0] == "x0,x1"


def test_suite_has_distinct_reproducible_series():
    suite = generate_suite(SynthSpec(length=200, split=50), 4)
    assert [d.series.id for d in suite] == ["ar1_0", "ar1_1", "ar1_2", "ar1_3"]
    assert len({d.series.values.tobytes() for d in suite}) == 4
    again = generate_suite(SynthSpec(length=200, split=50), 4)
    assert all(a.series.values.tobytes() == b.series.values.tobytes() for a, b in zip(suite, again))


# -- PACF ------------------------------------------------------------------------------------


def test_pacf_matches_statsmodels():
    y = generate(SynthSpec()).series.values
    np.testing.assert_allclose(pacf(y, 20), sm_pacf(y, nlags=20, method="ldb")[1:], rtol=0, atol=1e-12)


def test_pacf_first_two_lags_by_hand():
    y = generate(SynthSpec(kind="iid_gauss", length=400, split=10)).series.values
    g = autocovariance(y, 2)
    r1, r2 = g[1] / g[0], g[2] / g[0]
    p = pacf(y, 2)
    assert p[0] == pytest.approx(r1, abs=1e-15)
    assert p[1] == pytest.approx((r2 - r1**2) / (1 - r1**2), abs=1e-14)


def test_pacf_ar1_cutoff():
    y = generate(SynthSpec(length=20000, split=100)).series.values
    p = pacf(y, 10)
    band = 2 / np.sqrt(y.size)
    assert p[0] == pytest.approx(0.9, abs=band)
    assert np.all(np.abs(p[1:]) <= band)


def test_pacf_ar2_cutoff():
    e = RandomStream(3, "ar2").normal(10000)
    y = np.zeros(10000)
    for t in range(2, y.size):
        y[t] = 0.5 * y[t - 1] + 0.3 * y[t - 2] + e[t]
    p = pacf(y, 5)
    band = 2 / np.sqrt(y.size)
    assert p[1] == pytest.approx(0.3, abs=band) and abs(p[1]) > band
    assert abs(p[2]) <= band


def test_pacf_white_noise_band():
    y = RandomStream(8, "wn").normal(5000)
    p = pacf(y, 40)
    assert np.mean(np.abs(p) <= 2 / np.sqrt(5000)) >= 0.95


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=12, max_size=80).filter(lambda v: np.ptp(v) > 1e-3))
def test_pacf_bounded_and_lag1_is_acf(v):
    y = np.asarray(v)
    p = pacf(y, max(1, (y.size - 1) // 4))
    assert np.all(np.abs(p) <= 1 + 1e-12)
    assert p[0] == pytest.approx(acf1(y), abs=1e-12)


def test_pacf_errors():
    with pytest.raises(ValueError):
        pacf(np.full(100, 2.0), 5)
    with pytest.raises(ValueError):
        pacf(np.arange(40.0), 10)
    with pytest.raises(ValueError):
        pacf(np.arange(40.0), 0)


def test_pacf_accepts_timeseries():
    s = generate(SynthSpec(length=400, split=100)).series
    assert isinstance(s, TimeSeries)
    np.testing.assert_array_equal(pacf(s, 5), pacf(s.values, 5))
