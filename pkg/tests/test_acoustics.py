import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pouringnet import acoustics as A
from pouringnet import dsp, wavio
from oracles import closed_pipe_hz, normal_equations_quadratic

CYL70 = A.ContainerSpec("cyl70", total_height=150.0, inner_diameter=70.0)


# --- resonance ---------------------------------------------------------------

@pytest.mark.parametrize("air, expected", [(100.0, 708.68), (50.0, 1207.75)])
def test_resonance_worked_examples(air, expected):
    # hand values: 343 / (4 * 0.121) and 343 / (4 * 0.071)
    assert A.resonance_frequency(air, CYL70) == pytest.approx(expected, abs=0.01)
    assert A.resonance_frequency(air, CYL70) == pytest.approx(closed_pipe_hz(air, 70.0), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(60, 200), st.floats(40, 100))
def test_resonance_strictly_decreasing(height, diameter):
    spec = A.ContainerSpec("c", height, diameter)
    air = np.linspace(0.5, height, 100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.ResonanceBandWarning)
        f = A.resonance_frequency(air, spec)
    assert np.all(np.diff(f) < 0)


@pytest.mark.parametrize("air", [0.0, -1.0, 150.5])
def test_resonance_domain(air):
    with pytest.raises(ValueError):
        A.resonance_frequency(air, CYL70)


def test_out_of_band_warns_without_clamping():
    with pytest.warns(A.ResonanceBandWarning):
        f = A.resonance_frequency(1.0, CYL70)
    assert f == pytest.approx(closed_pipe_hz(1.0, 70.0))
    assert f > 2048


@pytest.mark.parametrize("kwargs", [
    dict(total_height=0, inner_diameter=70), dict(total_height=100, inner_diameter=-1),
    dict(total_height=100, inner_diameter=70, material_damping=0),
    dict(total_height=100, inner_diameter=70, material_damping=1.5)])
def test_container_validation(kwargs):
    with pytest.raises(ValueError):
        A.ContainerSpec("bad", **kwargs)


def test_container_library_partitions():
    assert set(A.TRAIN_CONTAINERS).isdisjoint(A.HELD_OUT_CONTAINERS)
    assert {A.CONTAINERS[n].total_height for n in A.TRAIN_CONTAINERS} == {127.0, 150.0, 99.0}


# --- simulation --------------------------------------------------------------

def test_zero_flow_is_background_only():
    wave, trace = A.simulate_pour(CYL70, A.PourProfile(A.ConstantFlow(0.0), 1.0, 30.0), 16000, 1)
    assert np.all(trace.liquid_height == 30.0)
    # no tone and no turbulence: only the background at -snr_db below the peak level
    expected = CYL70.resonance_gain / np.sqrt(2) * 10 ** (-20 / 20)
    assert np.std(wave) == pytest.approx(expected, rel=0.05)


def test_constant_flow_height_is_linear():
    prof = A.PourProfile(A.ConstantFlow(20.0), 2.0, 10.0)
    _, trace = A.simulate_pour(CYL70, prof, 8000, 0)
    expected = 10.0 + 20000.0 * trace.timestamps / CYL70.area
    np.testing.assert_allclose(trace.liquid_height, expected, atol=1e-9)


def test_trace_invariants_random_profile():
    spec = A.CONTAINERS["mug"]
    _, trace = A.simulate_pour(spec, A.random_profile(spec, np.random.default_rng(3)), 16000, 3)
    np.testing.assert_array_equal(trace.air_column, spec.total_height - trace.liquid_height)
    assert np.all(np.diff(trace.liquid_height) >= 0)
    assert trace.liquid_height.min() >= 0 and trace.liquid_height.max() <= spec.total_height
    np.testing.assert_allclose(trace.weight, trace.liquid_height * spec.area / 1000.0)


def test_random_profile_hits_final_air():
    spec = A.CONTAINERS["glass"]
    for s in range(5):
        prof = A.random_profile(spec, np.random.default_rng(s))
        _, trace = A.simulate_pour(spec, prof, 8000, s)
        assert 4.0 <= prof.duration <= 11.0
        assert 21.5 <= trace.air_column[-1] <= 35.5


def test_overfill_reports_time():
    prof = A.PourProfile(A.ConstantFlow(100.0), 10.0, 0.0)
    with pytest.raises(A.OverfillError) as err:
        A.simulate_pour(CYL70, prof, 8000)
    # 150 mm of a 70 mm cylinder holds ~577 ml, reached after ~5.77 s at 100 ml/s
    assert err.value.time == pytest.approx(150 * CYL70.area / 1000 / 100, abs=1e-3)


def test_simulation_deterministic():
    prof = A.PourProfile(A.ConstantFlow(15.0), 1.0)
    a, _ = A.simulate_pour(CYL70, prof, 16000, seed=5)
    b, _ = A.simulate_pour(CYL70, prof, 16000, seed=5)
    c, _ = A.simulate_pour(CYL70, prof, 16000, seed=6)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_low_sample_rate_rejected():
    with pytest.raises(ValueError):
        A.simulate_pour(CYL70, A.PourProfile(A.ConstantFlow(1.0), 1.0), 4000)


@pytest.mark.parametrize("name", A.TRAIN_CONTAINERS + A.HELD_OUT_CONTAINERS)
def test_spectral_peak_tracks_physics(name):
    """Per-frame argmax bin within 2 bins of the closed-pipe formula."""
    spec = A.CONTAINERS[name]
    prof = A.random_profile(spec, np.random.default_rng(11))
    wave, trace = A.simulate_pour(spec, prof, 44100, 11)
    audio = dsp.resample(wave, 44100, 16000)
    S = dsp.stft_spectrogram(audio).values
    t = np.arange(S.shape[1]) * 0.016
    flowing = prof.flow_rate_fn(t) > 5.0
    lo = int(256 / 31.25)
    peak_bin = lo + np.argmax(S[lo:], axis=0)
    expected_bin = closed_pipe_hz(trace.air_column_at(t), spec.inner_diameter) / 31.25
    assert flowing.sum() > 50
    assert np.max(np.abs(peak_bin - expected_bin)[flowing][2:-2]) <= 2


# --- trace and wav files -----------------------------------------------------

def test_trace_csv_round_trip(tmp_path):
    spec = A.CONTAINERS["thermos"]
    _, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(10.0), 1.5, 5.0), 8000)
    path = tmp_path / "t.csv"
    A.write_trace(path, trace)
    assert path.read_text().splitlines()[0] == "t,liquid_height_mm,air_column_mm,weight_g"
    back = A.read_trace(path, trace.sample_rate, spec)
    assert back.duration == pytest.approx(trace.duration)
    q = np.linspace(0, 1.4, 37)
    np.testing.assert_allclose(back.air_column_at(q), trace.air_column_at(q), atol=1e-5)


def test_trace_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,c,d\n0,0,0,0\n")
    with pytest.raises(ValueError):
        A.read_trace(path, 8000)


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    wavio.write_wav(tmp_path / "a.wav", x, 22050)
    y, rate = wavio.read_wav(tmp_path / "a.wav")
    assert rate == 22050
    assert np.max(np.abs(x - y)) <= 0.5 / 32767 + 1e-12


def test_wav_clips_and_is_little_endian(tmp_path):
    wavio.write_wav(tmp_path / "a.wav", np.array([2.0, -2.0, 0.5]), 8000)
    raw = (tmp_path / "a.wav").read_bytes()
    assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
    assert raw[-6:] == np.array([32767, -32767, 16384], dtype="<i2").tobytes()


# --- calibration -------------------------------------------------------------

def test_fit_linear_is_degenerate_quadratic():
    pairs = [(w, 0.5 * w) for w in np.linspace(0, 300, 15)]
    poly = A.fit_weight_to_height(pairs)
    np.testing.assert_allclose(poly.coefficients, [0, 0.5, 0], atol=1e-10)
    assert poly.residual_norm < 1e-9


def test_fit_recovers_known_quadratic():
    w = np.linspace(0, 500, 15)
    h = 0.001 * w**2 + 0.2 * w + 1
    poly = A.fit_weight_to_height(list(zip(w, h)))
    np.testing.assert_allclose(poly.coefficients, [0.001, 0.2, 1.0], rtol=1e-9, atol=1e-9)


def test_fit_residual_matches_normal_equations():
    rng = np.random.default_rng(2)
    pairs = A.calibration_pairs(CYL70)
    w = np.array([p[0] for p in pairs])
    h = np.array([p[1] for p in pairs]) + rng.normal(0, 0.5, len(pairs))
    poly = A.fit_weight_to_height(list(zip(w, h)))
    coef, residual = normal_equations_quadratic(list(w), list(h))
    np.testing.assert_allclose(poly.coefficients, coef, rtol=1e-6, atol=1e-9)
    assert poly.residual_norm == pytest.approx(residual, rel=1e-6)


def test_fit_needs_three_distinct_weights():
    with pytest.raises(np.linalg.LinAlgError):
        A.fit_weight_to_height([(1, 1), (1, 1), (2, 2)])


def test_interpolate_scale():
    readings = [(0.0, 0.0), (1.0, 10.0), (2.0, 14.0)]
    assert A.interpolate_scale(readings, 0.25) == pytest.approx(2.5)
    np.testing.assert_array_equal(A.interpolate_scale(readings, [0.0, 1.0, 2.0]), [0, 10, 14])
    q = np.linspace(1.0, 2.0, 50)
    np.testing.assert_allclose(A.interpolate_scale(readings, q), 10 + 4 * (q - 1.0))
    with pytest.raises(ValueError):
        A.interpolate_scale(readings, 2.5)
    with pytest.raises(ValueError):
        A.interpolate_scale([(1.0, 0.0), (0.0, 1.0)], 0.5)


def test_scale_pipeline_recovers_heights():
    spec = A.CONTAINERS["glass"]
    _, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(25.0), 4.0, 3.0), 8000)
    poly = A.fit_weight_to_height(A.calibration_pairs(spec), spec.name)
    q = np.linspace(0.0, 3.0, 40)
    got = A.heights_from_scale(A.scale_readings(trace), q, poly)
    np.testing.assert_allclose(got, trace.liquid_height_at(q), atol=1e-6)
