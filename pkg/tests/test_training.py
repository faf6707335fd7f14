import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from pouringnet import acoustics as A
from pouringnet import dsp, training as T
from oracles import mono_loop, mse_loop

seq = arrays(np.float64, st.integers(1, 40), elements=st.floats(-200, 200))


@pytest.fixture(scope="module")
def tiny_pours():
    return list(T.synthesize_pours(6, seed=3, sample_rate=16000))


@pytest.fixture(scope="module")
def tiny_clips(tiny_pours):
    return T.clips_from_pours(tiny_pours, 0.3, seed=3)


# --- losses -------------------------------------------------------------------

def test_loss_worked_examples():
    assert T.loss_height([50, 52, 51], [50, 50, 50]) == pytest.approx(5 / 3)
    assert T.loss_mono([50, 52, 51]) == 2.0
    assert T.loss_total([50, 52, 51], [50, 50, 50], 0.01) == pytest.approx(1.6867, abs=1e-4)
    assert T.loss_height(np.arange(5) + 2.0, np.arange(5)) == 4.0
    assert T.loss_mono([5, 4, 3]) == 0.0
    assert T.loss_mono([7.0]) == 0.0


@given(seq)
def test_loss_height_matches_loop(p):
    truth = np.linspace(100, 20, len(p))
    assert T.loss_height(p, truth) == pytest.approx(mse_loop(p, truth), rel=1e-12, abs=1e-12)


@given(seq)
def test_loss_mono_matches_loop(p):
    assert T.loss_mono(p) == pytest.approx(mono_loop(p), rel=1e-12, abs=1e-12)


@given(seq, st.floats(0, 1))
def test_non_increasing_means_total_equals_height(p, alpha):
    p = np.sort(p)[::-1]
    truth = np.zeros_like(p)
    assert T.loss_mono(p) == 0.0
    assert T.loss_total(p, truth, alpha) == T.loss_height(p, truth)


@given(seq)
def test_alpha_zero_is_height_exactly(p):
    truth = np.full(len(p), 3.0)
    assert T.loss_total(p, truth, 0.0) == T.loss_height(p, truth)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        T.loss_height([1, 2], [1, 2, 3])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-50, 50), unique=True),
       st.floats(0, 0.5))
def test_loss_gradient_matches_finite_differences(p, alpha):
    truth = np.linspace(10, 0, len(p))
    diffs = np.abs(np.diff(p))
    if diffs.min() < 1e-3:
        return  # hinge kink within the difference stencil
    g = T.loss_total_grad(p, truth, alpha)
    eps = 1e-6
    num = np.empty_like(p)
    for i in range(len(p)):
        up, dn = p.copy(), p.copy()
        up[i] += eps
        dn[i] -= eps
        num[i] = (T.loss_total(up, truth, alpha) - T.loss_total(dn, truth, alpha)) / (2 * eps)
    np.testing.assert_allclose(g, num, atol=1e-6)


def test_loss_gradient_zero_at_ties():
    g = T.loss_total_grad([5.0, 5.0], [5.0, 5.0], 1.0)
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_batch_losses_rowwise():
    rng = np.random.default_rng(0)
    p, y = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    h, m = T.batch_losses(p, y, 0.01)
    for i in range(4):
        assert h[i] == pytest.approx(T.loss_height(p[i], y[i]))
        assert m[i] == pytest.approx(T.loss_mono(p[i]))


# --- optimizer ----------------------------------------------------------------

def test_adam_matches_textbook_update():
    theta = {"w": np.array([1.0, -2.0])}
    opt = T.Adam(theta, lr=0.1)
    m = v = np.zeros(2)
    ref = np.array([1.0, -2.0])
    for step in range(1, 6):
        g = 2 * ref  # gradient of |w|^2
        opt.step(theta, {"w": 2 * theta["w"].copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
        np.testing.assert_allclose(theta["w"], ref, rtol=1e-12)


def test_adam_first_step_is_lr_times_sign():
    theta = {"w": np.array([3.0, -3.0, 0.5])}
    T.Adam(theta, lr=0.01).step(theta, {"w": np.array([5.0, -0.2, 1e3])})
    np.testing.assert_allclose(theta["w"], [2.99, -2.99, 0.49], atol=1e-8)


def test_cosine_schedule_endpoints():
    cfg = T.TrainConfig(epochs=11, learning_rate=1e-3, lr_schedule="cosine", min_lr_fraction=0.1)
    assert cfg.lr_at(1) == pytest.approx(1e-3)
    assert cfg.lr_at(6) == pytest.approx(0.55e-3)
    assert cfg.lr_at(11) == pytest.approx(1e-4)
    assert T.TrainConfig(epochs=5).lr_at(5) == 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        T.TrainConfig(clip_seconds=3.0)
    with pytest.raises(ValueError):
        T.TrainConfig(lr_schedule="step")


# --- clip sampling -------------------------------------------------------------

def test_clip_starts_uniform_chi_square():
    starts = T.draw_clip_starts(8.0, 10_000, np.random.default_rng(0))
    assert starts.min() >= 0 and starts.max() <= 4.0
    counts, _ = np.histogram(starts, bins=20, range=(0, 4))
    assert stats.chisquare(counts).pvalue > 0.001


def test_clip_count_and_range():
    spec = A.CONTAINERS["glass"]
    wave, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(20.0), 8.0, 0.0), 16000, 1)
    clips = T.sample_clips(trace, wave, 1.0, rng_seed=4, trace_id="p")
    assert len(clips) == 8
    for c in clips:
        assert 0 <= c.clip_start <= 4.0
        assert c.spectrogram.values.shape == (257, 251)
        assert c.labels.shape == (251,)
        assert np.all(np.diff(c.labels) <= 0)


def test_labels_follow_analytic_trace():
    spec = A.CONTAINERS["thermos"]
    rate, h0 = 20.0, 5.0
    wave, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(rate), 6.0, h0), 16000, 2)
    (clip,) = T.sample_clips(trace, wave, 1 / 6, rng_seed=9)
    t = clip.clip_start + np.arange(251) * 0.016
    expected = spec.total_height - (h0 + rate * 1000 * t / spec.area)
    np.testing.assert_allclose(clip.labels, expected, atol=1e-9)


def test_exact_length_recording_has_one_start():
    spec = A.CONTAINERS["mug"]
    wave, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(5.0), 4.0, 0.0), 16000, 0)
    clips = T.sample_clips(trace, wave, 1.0, rng_seed=1)
    assert len(clips) == 4
    assert {c.clip_start for c in clips} == {0.0}


def test_short_recording_rejected():
    spec = A.CONTAINERS["mug"]
    wave, trace = A.simulate_pour(spec, A.PourProfile(A.ConstantFlow(5.0), 3.0), 16000)
    with pytest.raises(ValueError, match="shorter"):
        T.sample_clips(trace, wave, 1.0)


def test_clip_spectrogram_is_stft_of_resampled_audio(tiny_pours):
    pour = tiny_pours[0]
    (clip, *_) = T.sample_clips(pour.trace, pour.waveform, 0.5, rng_seed=0)
    first = int(round(clip.clip_start * 16000))
    ref = dsp.stft_spectrogram(pour.waveform[first:first + 64000]).values.astype(np.float32)
    np.testing.assert_array_equal(clip.spectrogram.values, ref)


# --- training loop -------------------------------------------------------------

def test_split_has_no_trace_overlap(tiny_clips):
    train, val = T.split_by_trace(tiny_clips, 0.34, seed=1)
    assert {c.source_trace_id for c in train}.isdisjoint({c.source_trace_id for c in val})
    assert len(train) + len(val) == len(tiny_clips)
    assert val


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        T.train([], T.TrainConfig())


def test_overfit_one_clip(tiny_clips):
    cfg = T.TrainConfig(encoder_kind="fc", hidden_size=64, head_size=32, epochs=200,
                        learning_rate=3e-3, val_fraction=0.0, batch_size=1)
    res = T.train(tiny_clips[:1], cfg)
    assert res.log[-1].train_loss < 0.1


def test_recurrent_fit_one_clip(tiny_clips):
    cfg = T.TrainConfig(encoder_kind="gru", hidden_size=16, head_size=16, epochs=60,
                        learning_rate=1e-2, val_fraction=0.0, batch_size=1)
    res = T.train(tiny_clips[:1], cfg)
    assert res.log[-1].train_loss < 1e-3 * res.log[0].train_loss


def test_first_epoch_improves_on_most_seeds(tiny_clips):
    improved = 0
    for seed in range(10):
        cfg = T.TrainConfig(encoder_kind="gru", hidden_size=8, head_size=8, epochs=1,
                            learning_rate=1e-2, batch_size=4, seed=seed, val_fraction=0.2)
        log = T.train(tiny_clips, cfg).log
        improved += log[1].train_loss < log[0].train_loss
    assert improved >= 9


def test_training_reproducible(tiny_clips):
    cfg = T.TrainConfig(encoder_kind="lstm", hidden_size=8, head_size=8, epochs=2, batch_size=4)
    a = T.train(tiny_clips, cfg)
    b = T.train(tiny_clips, cfg)
    assert [r.train_loss for r in a.log] == [r.train_loss for r in b.log]
    for k in a.params.tensors:
        assert a.params.tensors[k].tobytes() == b.params.tensors[k].tobytes()


def test_normalization_stored_in_model(tiny_clips):
    cfg = T.TrainConfig(encoder_kind="fc", hidden_size=8, head_size=8, epochs=1, log_compress=True)
    res = T.train(tiny_clips, cfg)
    train, _ = T.split_by_trace(tiny_clips, cfg.val_fraction, cfg.split_seed)
    X, _ = T.stack_clips(train)
    mean = np.mean(np.log1p(X), dtype=np.float64)
    assert res.params.normalization["spec_mean"] == pytest.approx(mean, rel=1e-6)
    assert res.params.normalization["log_compress"] == 1.0


def test_nan_is_reported_with_batch(tiny_clips):
    bad = [T.ClipSample(c.spectrogram, c.labels.copy(), c.source_trace_id, c.clip_start)
           for c in tiny_clips]
    for c in bad:
        c.labels[:] = np.nan
    with pytest.raises(T.TrainingError, match="batch 0"):
        T.train(bad, T.TrainConfig(encoder_kind="fc", hidden_size=4, head_size=4, epochs=1))


def test_write_log(tmp_path, tiny_clips):
    res = T.train(tiny_clips, T.TrainConfig(encoder_kind="fc", hidden_size=4, head_size=4,
                                            epochs=2))
    T.write_log(tmp_path / "log.csv", res.log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_mono_loss,wall_seconds"
    assert len(lines) == 4
