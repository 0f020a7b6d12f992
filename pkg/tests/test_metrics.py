import numpy as np
import pytest

from fpadfuse.errors import NoLiveSamples, NoSpoofSamples, SingleClassDataset
from fpadfuse.metrics import (
    LIVE,
    SPOOF,
    ScoredSample,
    ace_and_accuracy,
    apcer,
    bpcer,
    det_curve,
    evaluate,
    roc_auc,
    roc_curve,
)


def samples_from(live_scores, spoof_scores, material="latex"):
    out = [ScoredSample(score=s, label=LIVE) for s in live_scores]
    out += [ScoredSample(score=s, label=SPOOF, material=material) for s in spoof_scores]
    return out


def random_samples(rng, n):
    scores = rng.random(n)
    labels = rng.random(n) < 0.5
    # ensure both classes show up
    labels[0], labels[1] = True, False
    return [
        ScoredSample(score=float(s), label=LIVE if l else SPOOF)
        for s, l in zip(scores, labels)
    ]


# ---------------------------------------------------------------------------
# sample validation
# ---------------------------------------------------------------------------

def test_sample_validation():
    with pytest.raises(ValueError):
        ScoredSample(score=1.5, label=LIVE)
    with pytest.raises(ValueError):
        ScoredSample(score=float("nan"), label=LIVE)
    with pytest.raises(ValueError):
        ScoredSample(score=0.5, label="bona-fide")


# ---------------------------------------------------------------------------
# apcer / bpcer
# ---------------------------------------------------------------------------

def test_apcer_worked_example():
    spoof = [0.9, 0.6] + [0.1] * 8  # 2 of 10 at or above 0.5
    assert apcer(samples_from([], spoof) , 0.5) == pytest.approx(20.0)


def test_apcer_zero_when_all_below():
    assert apcer(samples_from([], [0.1, 0.2, 0.3]), 0.5) == 0.0


def test_apcer_requires_spoof():
    with pytest.raises(NoSpoofSamples):
        apcer(samples_from([0.9], []), 0.5)


def test_bpcer_worked_example():
    live = [0.9] * 7 + [0.1]  # 1 of 8 below threshold
    assert bpcer(samples_from(live, []), 0.5) == pytest.approx(12.5)


def test_bpcer_zero_when_all_above():
    assert bpcer(samples_from([0.8, 0.9], []), 0.5) == 0.0


def test_bpcer_requires_live():
    with pytest.raises(NoLiveSamples):
        bpcer(samples_from([], [0.1]), 0.5)


# ---------------------------------------------------------------------------
# ace / accuracy
# ---------------------------------------------------------------------------

def test_ace_accuracy_identity():
    ace, acc = ace_and_accuracy(3.51 * 2 - 3.51, 3.51)  # apcer = bpcer = 3.51
    assert ace == pytest.approx(3.51)
    assert acc == pytest.approx(96.49)


def test_ace_perfect():
    assert ace_and_accuracy(0.0, 0.0) == (0.0, 100.0)


def test_ace_table_example():
    ace, _ = ace_and_accuracy(2.62, 5.79)
    assert ace == pytest.approx(4.205)


def test_accuracy_plus_ace_always_100():
    rng = np.random.default_rng(40)
    for _ in range(50):
        report = evaluate(random_samples(rng, 60), rng.random())
        assert report.accuracy + report.ace == 100.0
        assert 0.0 <= report.apcer <= 100.0
        assert 0.0 <= report.bpcer <= 100.0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_perfect_model():
    report = evaluate(samples_from([0.9, 0.8], [0.1, 0.2]), 0.5)
    assert report.accuracy == 100.0
    assert report.ace == 0.0
    assert report.live_errors == 0 and report.spoof_errors == 0


def test_evaluate_threshold_zero_predicts_all_live():
    report = evaluate(samples_from([0.4, 0.6], [0.1, 0.9]), 0.0)
    assert report.bpcer == 0.0
    assert report.apcer == 100.0


def test_evaluate_per_material_breakdown():
    samples = samples_from([0.9], [0.9], material="gelatine")
    samples += [ScoredSample(score=0.1, label=SPOOF, material="wood-glue")]
    report = evaluate(samples, 0.5)
    assert report.apcer_by_material == {"gelatine": 100.0, "wood-glue": 0.0}


# ---------------------------------------------------------------------------
# det curve
# ---------------------------------------------------------------------------

def oracle_curve(samples, thresholds):
    """Brute-force per-threshold recount."""
    out = []
    for t in thresholds:
        live_err = sum(1 for s in samples if s.label == LIVE and s.score < t)
        spoof_err = sum(1 for s in samples if s.label == SPOOF and s.score >= t)
        n_live = sum(1 for s in samples if s.label == LIVE)
        n_spoof = sum(1 for s in samples if s.label == SPOOF)
        out.append((100.0 * spoof_err / n_spoof, 100.0 * live_err / n_live))
    return out


def test_det_perfect_separation_has_zero_point():
    det = det_curve(samples_from([0.8, 0.9], [0.1, 0.2]))
    joint = np.minimum(det.apcer, det.bpcer)
    assert np.any((det.apcer == 0.0) & (det.bpcer == 0.0))
    assert det.bpcer_at_apcer1 == pytest.approx(0.0)


def test_det_degenerate_scores():
    det = det_curve(samples_from([0.5, 0.5], [0.5, 0.5]))
    pts = set(zip(det.apcer.tolist(), det.bpcer.tolist()))
    assert (100.0, 0.0) in pts
    assert (0.0, 100.0) in pts


def test_det_matches_recount_oracle():
    rng = np.random.default_rng(41)
    samples = random_samples(rng, 1000)
    det = det_curve(samples)
    expected = oracle_curve(samples, det.thresholds)
    got = list(zip(det.apcer.tolist(), det.bpcer.tolist()))
    assert got == expected


def test_det_monotone():
    rng = np.random.default_rng(42)
    det = det_curve(random_samples(rng, 500))
    order = np.argsort(det.thresholds, kind="stable")
    assert np.all(np.diff(det.bpcer[order]) >= 0)
    assert np.all(np.diff(det.apcer[order]) <= 0)


def test_det_invariant_under_monotone_transform():
    rng = np.random.default_rng(43)
    samples = random_samples(rng, 200)
    warped = [ScoredSample(score=float(s.score**3), label=s.label) for s in samples]
    a = det_curve(samples)
    b = det_curve(warped)
    assert set(zip(a.apcer.tolist(), a.bpcer.tolist())) \
        == set(zip(b.apcer.tolist(), b.bpcer.tolist()))


def test_det_requires_both_classes():
    with pytest.raises(SingleClassDataset):
        det_curve(samples_from([0.9, 0.8], []))


# ---------------------------------------------------------------------------
# roc
# ---------------------------------------------------------------------------

def test_roc_perfect_passes_corner():
    fpr, tpr = roc_curve(samples_from([0.8, 0.9], [0.1, 0.2]))
    assert any(f == 0.0 and t == 1.0 for f, t in zip(fpr, tpr))


def test_roc_auc_random_half():
    aucs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        aucs.append(roc_auc(random_samples(rng, 2000)))
    assert abs(np.mean(aucs) - 0.5) < 0.05


def test_roc_auc_reversal_symmetry():
    rng = np.random.default_rng(44)
    samples = random_samples(rng, 400)
    flipped = [ScoredSample(score=1.0 - s.score, label=s.label) for s in samples]
    assert roc_auc(samples) + roc_auc(flipped) == pytest.approx(1.0, abs=0.02)
