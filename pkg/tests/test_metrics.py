import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from aapd import metrics as mt
from aapd.dynamics import Detection, Diagnosis
from aapd.matching import HardwareClass, Paratope
from aapd.repertoire import Category
from aapd.sim import ExperimentLog

M, S = HardwareClass.MOTOR, HardwareClass.SENSOR
T = 5400  # 900 s


def healthy_log(n=1, ticks=T):
    log = ExperimentLog.empty(n, ticks)
    for k in ("d_l", "d_r", "d_s"):
        log.data[k][:] = 1.0
    return log


def test_psi_examples():
    log = healthy_log()
    log.data["d_l"][3600:, 0] = 0.7  # faulty for the last 300 s
    log.data["detected_motor"][4500:, 0] = True  # detected for 150 s of it
    assert mt.compute_psi(log, 0) == (0.5, 0.0)
    assert mt.compute_psi(log, 0, M) == (0.5, 0.0)
    assert mt.compute_psi(log, 0, S) == (None, 0.0)
    assert mt.compute_psi(healthy_log(), 0) == (None, 0.0)


def test_psi_false_positive_fraction():
    log = healthy_log(2)
    log.data["detected_sensor"][:540, 1] = True
    assert mt.compute_psi(log, 1) == (None, pytest.approx(0.1))
    assert mt.compute_psi(log) == (None, pytest.approx(0.05))  # pooled over both robots


def test_faulty_threshold_inclusive():
    log = healthy_log()
    log.data["d_s"][:10, 0] = 0.75
    log.data["d_s"][10:20, 0] = 0.7500001
    assert mt.faulty_mask(log)[:, 0].sum() == 10


def test_compute_delta():
    log = healthy_log()
    log.data["d_l"][99, 0], log.data["d_r"][99, 0], log.data["d_s"][99, 0] = 0.6, 0.8, 0.54
    assert mt.compute_delta(log, {"robot": 0, "tick": 100, "hardware_class": "Motor"}) == 0.6
    assert mt.compute_delta(log, {"robot": 0, "tick": 100, "hardware_class": "Sensor"}) == 0.54


def test_detection_frequency():
    log = healthy_log()
    log.data["d_l"][:, 0] = 0.5
    log.data["detected_motor"][300:1500, 0] = True  # four cycles
    assert mt.detection_frequency(log)[0] == {"tp": 1, "fp": 0}
    log.data["detected_motor"][1800:2100, 0] = True  # clears, then detects again
    assert mt.detection_frequency(log)[0] == {"tp": 2, "fp": 0}
    clone = healthy_log(10)
    assert mt.fp_crossings(clone) == 0


def test_fp_and_sustained():
    log = healthy_log()
    log.data["detected_sensor"][300:600, 0] = True  # one cycle
    log.data["detected_sensor"][1200:1800, 0] = True  # two cycles
    assert mt.fp_crossings(log) == 2
    assert mt.sustained_fp(log) == 1


def test_onset_and_first_delta():
    log = healthy_log()
    log.data["d_l"][:, 0] = np.linspace(1.0, 0.4, T)
    log.data["detected_motor"][1200:1500, 0] = True
    log.data["detected_motor"][3000:3300, 0] = True
    ds = mt.onset_deltas(log, M, 0)
    assert ds == [log.data["d_l"][1200, 0], log.data["d_l"][3000, 0]]
    assert mt.first_delta(log, M, 0) == ds[0]
    assert mt.first_delta(log, M, 0, d0=0.75) == ds[1]
    assert mt.first_delta(log, S, 0) is None


def detection(truth, predicted, new=True):
    p = Paratope(np.zeros((3, 30)), M)
    d = Detection(0, M, 50.0, 1, [p], [1], [1.5], 0, [1] if new else [])
    d.truth = truth
    d.diagnosis = Diagnosis(M, predicted)
    return d


def test_confusion():
    dets = [detection(Category.LEFT_MOTOR, Category.LEFT_MOTOR),
            detection(Category.LEFT_MOTOR, Category.RIGHT_MOTOR),
            detection(Category.BOTH_MOTORS, Category.BOTH_MOTORS),
            detection(Category.RIGHT_MOTOR, None),
            detection(Category.FALSE_POSITIVE, Category.BOTH_MOTORS),
            detection(Category.LEFT_MOTOR, Category.LEFT_MOTOR, new=False)]
    c = mt.diagnosis_confusion(dets)
    assert c.counts[Category.LEFT_MOTOR.value] == {"LeftMotor": 1, "RightMotor": 1}
    assert c.counts["RightMotor"] == {"Undiagnosed": 1}
    assert c.total() == 4 and c.correct() == 2
    assert c.accuracy() == 0.5
    assert c.accuracy(exclude_fp=False) == pytest.approx(2 / 5)
    assert mt.diagnosis_confusion(dets, onsets_only=False).total() == 5


def test_lower_median():
    assert mt.lower_median([3, 1, 2]) == 2
    assert mt.lower_median([4, 1, 3, 2]) == 2
    assert mt.lower_median([]) is None
    assert mt.lower_median([None, 5]) == 5


def test_foraging_summary():
    def with_resources(k):
        log = healthy_log(1, 2 * k + 2)
        log.data["carrying"][0:2 * k:2, 0] = True
        return log
    runs = [with_resources(35)]
    base = [with_resources(50)]
    assert runs[0].resources == 35
    out = mt.foraging_summary(runs, base)
    assert out["percent_of_baseline"] == pytest.approx(70.0)
    assert mt.foraging_summary(base, base)["percent_of_baseline"] == 100.0
    assert out["median_lost"] == 0
    assert mt.percent_of_baseline(35, 50) == pytest.approx(70.0)


def test_run_metrics_and_outputs():
    log = healthy_log(2)
    log.data["d_s"][2700:, 1] = 0.5
    log.data["detected_sensor"][3000:, 1] = True
    log.data["dP"][:] = 1 / 375
    m = mt.run_metrics(log)
    assert m.psi_t[1] == pytest.approx(2400 / 2700)
    assert m.psi_f[0] == 0.0 and m.psi_t[0] is None
    assert m.deltas[1] == [0.5]
    assert m.power_consumed == pytest.approx(2 * 900 / 375)
    agg = mt.aggregate([m, m, m])
    assert agg["replicates"] == 3 and agg["median_delta"] == 0.5
    csv = mt.metrics_csv([m]).splitlines()
    assert csv[0].split(",") == list(mt.CSV_COLUMNS) and len(csv) == 2
    assert '"aggregate"' in mt.metrics_json([m])


@settings(max_examples=60, deadline=None)
@given(arrays(bool, (120, 3)), arrays(bool, (120, 3)), st.integers(1, 119))
def test_psi_counts_invariant_to_chunking(faulty, det, cut):
    def log_of(f, d):
        log = healthy_log(3, f.shape[0])
        log.data["d_s"][f] = 0.5
        log.data["detected_sensor"][:] = d
        return log
    whole = log_of(faulty, det)
    tf, th = faulty.sum(), (~faulty).sum()
    assert tf + th == 3 * 120  # every robot-tick is faulty or healthy
    parts = [log_of(faulty[:cut], det[:cut]), log_of(faulty[cut:], det[cut:])]
    hits_t = sum(int((p.detected() & mt.faulty_mask(p)).sum()) for p in parts)
    hits_f = sum(int((p.detected() & ~mt.faulty_mask(p)).sum()) for p in parts)
    psi_t, psi_f = mt.compute_psi(whole)
    assert psi_t == (None if tf == 0 else pytest.approx(hits_t / tf))
    assert psi_f == (None if th == 0 else pytest.approx(hits_f / th))
    if psi_t is not None:
        assert 0.0 <= psi_t <= 1.0
