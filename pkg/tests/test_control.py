import json

import numpy as np
import pytest

from pouringnet import acoustics as A
from pouringnet import control as C
from pouringnet import dsp

GLASS = A.CONTAINERS["glass"]


class Recorder:
    """Estimator stub that logs what reaches the decision path."""

    def __init__(self, values):
        self.values = iter(values)
        self.calls = []

    def __call__(self, spec, now):
        self.calls.append((spec, now))
        return next(self.values)


def short_profile(container=GLASS, start_air=60.0, descent=6.0):
    return C.closed_loop_profile(container, start_air=start_air, descent_rate=descent, end_air=45.0)


def test_profile_descends_at_requested_rate():
    prof = C.closed_loop_profile(GLASS, start_air=115.0, descent_rate=6.0)
    _, trace = A.simulate_pour(GLASS, prof, 8000)
    assert trace.air_column[0] == pytest.approx(115.0)
    slope = np.polyfit(trace.timestamps, trace.air_column, 1)[0]
    assert slope == pytest.approx(-6.0, rel=1e-9)
    assert prof.duration == pytest.approx((115 - 20) / 6)


def test_start_air_capped_at_height():
    prof = C.closed_loop_profile(A.CONTAINERS["mug"], start_air=115.0)
    assert prof.initial_liquid_height == 0.0


@pytest.mark.parametrize("target", [80.0, 55.0])
def test_oracle_overshoot_is_delay_integral(target):
    descent, delay = 6.0, 0.1
    prof = C.closed_loop_profile(GLASS, start_air=90.0, descent_rate=descent, end_air=40.0)
    oracle = C.OracleEstimator(GLASS, prof, seed=4)
    res = C.run_closed_loop(None, GLASS, prof, target, seed=4, estimator=oracle,
                            actuator_delay=delay)
    assert not res.timeout
    # flow (ml/s) times the delay, spread over the cross-section, is descent * delay in mm
    assert res.overshoot == pytest.approx(descent * delay, abs=0.1)
    assert res.achieved_air_column == pytest.approx(oracle.trace.air_column_at(res.stop_time))


def test_oracle_without_delay_stops_within_one_hop():
    prof = short_profile()
    oracle = C.OracleEstimator(GLASS, prof, seed=0)
    res = C.run_closed_loop(None, GLASS, prof, 50.0, estimator=oracle, actuator_delay=0.0)
    assert 0.0 <= res.overshoot <= 6.0 * C.HOP_SECONDS + 1e-9


def test_decision_path_sees_only_audio_spectrograms():
    rec = Recorder([100.0] * 5 + [0.0])
    C.run_closed_loop(None, GLASS, short_profile(), 50.0, estimator=rec)
    assert len(rec.calls) == 6
    for spec, now in rec.calls:
        assert isinstance(spec, dsp.Spectrogram)
        assert spec.values.shape == (257, 251)
        assert now >= C.WARMUP


def test_warmup_and_zero_prefix():
    rec = Recorder([0.0])
    res = C.run_closed_loop(None, GLASS, short_profile(), 50.0, estimator=rec)
    spec, now = rec.calls[0]
    assert now == pytest.approx(63 * C.HOP_SECONDS)  # first hop at or after 1 s
    assert res.decision_time == now
    # roughly three seconds of silence precede the received audio
    assert not np.any(spec.values[:, :150])
    assert np.all(spec.values[:, -5:].sum(axis=0) > 0)


def test_target_at_initial_air_stops_at_first_decision():
    prof = short_profile()
    oracle = C.OracleEstimator(GLASS, prof, seed=0)
    res = C.run_closed_loop(None, GLASS, prof, 59.0, estimator=oracle)
    assert res.decision_time == pytest.approx(63 * C.HOP_SECONDS)
    assert len(res.per_frame_predictions) == 1


def test_timeout_flagged_with_final_state():
    prof = short_profile()
    res = C.run_closed_loop(None, GLASS, prof, 10.0, estimator=Recorder([100.0] * 10_000))
    assert res.timeout and res.decision_time is None
    _, trace = A.simulate_pour(GLASS, prof, A.DEFAULT_SAMPLE_RATE)
    assert res.stop_time <= trace.duration
    assert res.achieved_air_column == pytest.approx(trace.air_column[-1], abs=0.01)


def test_deeper_target_never_stops_earlier():
    prof = short_profile()
    stops = []
    for target in (56.0, 52.0, 48.0):
        res = C.run_closed_loop(None, GLASS, prof, target, seed=2,
                                estimator=C.OracleEstimator(GLASS, prof, 2))
        stops.append(res.stop_time)
    assert stops == sorted(stops)


def test_invalid_target_and_missing_model():
    with pytest.raises(ValueError):
        C.run_closed_loop(None, GLASS, short_profile(), 0.0, estimator=Recorder([0.0]))
    with pytest.raises(ValueError):
        C.run_closed_loop(None, GLASS, short_profile(), GLASS.total_height, estimator=Recorder([0]))
    with pytest.raises(ValueError):
        C.run_closed_loop(None, GLASS, short_profile(), 50.0)


def test_latency_summary_arithmetic():
    s = C.measure_loop_latency([10.0, 20.0, 30.0], [5.0, 10.0, 15.0])
    assert s.mean_ms == 20.0 and s.max_ms == 30.0
    assert s.spectrogram_share == pytest.approx(0.5)
    assert s.p95_ms == pytest.approx(np.percentile([10, 20, 30], 95))
    with pytest.raises(ValueError):
        C.measure_loop_latency([])


def test_episode_records_latencies():
    res = C.run_closed_loop(None, GLASS, short_profile(), 50.0, estimator=Recorder([99.0, 0.0]))
    assert len(res.loop_latencies) == len(res.spectrogram_latencies) == 2
    s = C.measure_loop_latency(res)
    assert 0 < s.spectrogram_share <= 1


def test_jsonl_export(tmp_path):
    res = C.run_closed_loop(None, GLASS, short_profile(), 50.0, estimator=Recorder([0.0]))
    C.write_episodes(tmp_path / "e.jsonl", [res, res], timing=False)
    lines = (tmp_path / "e.jsonl").read_text().splitlines()
    assert len(lines) == 2
    row = json.loads(lines[0])
    assert row["target_air_column"] == 50.0
    assert "loop_latencies" not in row
    assert "loop_latencies" in json.loads(res.to_json())
