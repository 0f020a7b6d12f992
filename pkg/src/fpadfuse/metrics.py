"""ISO/IEC 30107-style evaluation: APCER, BPCER, ACE, accuracy, and
threshold-swept DET / ROC curves.

Decision convention throughout: predict Live iff score >= threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NoLiveSamples, NoSpoofSamples, SingleClassDataset

LIVE = "live"
SPOOF = "spoof"


@dataclass(frozen=True)
class ScoredSample:
    score: float  # in [0, 1]; higher = more live
    label: str  # LIVE or SPOOF
    material: str = ""

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.label not in (LIVE, SPOOF):
            raise ValueError(f"label must be {LIVE!r} or {SPOOF!r}")


@dataclass
class EvalReport:
    threshold: float
    apcer: float
    bpcer: float
    ace: float
    accuracy: float
    live_total: int
    spoof_total: int
    live_errors: int
    spoof_errors: int
    apcer_by_material: dict = field(default_factory=dict)

    def to_json(self, indent=2):
        return json.dumps(self.__dict__, indent=indent, sort_keys=True)


@dataclass(frozen=True)
class DetCurve:
    """Ordered (threshold, apcer, bpcer) trade-off points."""

    thresholds: np.ndarray
    apcer: np.ndarray
    bpcer: np.ndarray
    bpcer_at_apcer1: float  # BPCER interpolated at APCER = 1%


def apcer(samples, threshold) -> float:
    """Percent of spoof samples accepted as live (score >= threshold)."""
    scores = np.array([s.score for s in samples if s.label == SPOOF])
    if scores.size == 0:
        raise NoSpoofSamples("APCER needs at least one spoof sample")
    return float(100.0 * np.mean(scores >= threshold))


def bpcer(samples, threshold) -> float:
    """Percent of live samples rejected as spoof (score < threshold)."""
    scores = np.array([s.score for s in samples if s.label == LIVE])
    if scores.size == 0:
        raise NoLiveSamples("BPCER needs at least one live sample")
    return float(100.0 * np.mean(scores < threshold))


def ace_and_accuracy(apcer_pct, bpcer_pct):
    """ACE is the plain average of the two error rates; accuracy = 100 - ACE."""
    ace = (apcer_pct + bpcer_pct) / 2.0
    return ace, 100.0 - ace


def evaluate(samples, threshold=0.5) -> EvalReport:
    """Full report at one operating threshold, with per-material APCER."""
    a = apcer(samples, threshold)
    b = bpcer(samples, threshold)
    ace, acc = ace_and_accuracy(a, b)
    live = [s for s in samples if s.label == LIVE]
    spoof = [s for s in samples if s.label == SPOOF]
    by_material = {}
    for mat in sorted({s.material for s in spoof}):
        group = [s for s in spoof if s.material == mat]
        by_material[mat or "unspecified"] = float(
            100.0 * np.mean([s.score >= threshold for s in group])
        )
    return EvalReport(
        threshold=float(threshold),
        apcer=a,
        bpcer=b,
        ace=ace,
        accuracy=acc,
        live_total=len(live),
        spoof_total=len(spoof),
        live_errors=int(sum(s.score < threshold for s in live)),
        spoof_errors=int(sum(s.score >= threshold for s in spoof)),
        apcer_by_material=by_material,
    )


def _sweep_thresholds(samples):
    scores = sorted({s.score for s in samples} | {0.0, 1.0})
    # a point past the top score forces the all-spoof decision
    return np.array(scores + [np.nextafter(1.0, 2.0)])


def _require_both_classes(samples):
    labels = {s.label for s in samples}
    if labels != {LIVE, SPOOF}:
        raise SingleClassDataset("need both live and spoof samples")


def det_curve(samples) -> DetCurve:
    """APCER/BPCER trade-off over all distinct scores plus {0, 1}."""
    _require_both_classes(samples)
    live = np.sort(np.array([s.score for s in samples if s.label == LIVE]))
    spoof = np.sort(np.array([s.score for s in samples if s.label == SPOOF]))
    thresholds = _sweep_thresholds(samples)
    # score >= t accepted as live
    apcer_pts = 100.0 * (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    bpcer_pts = 100.0 * np.searchsorted(live, thresholds, side="left") / live.size
    return DetCurve(
        thresholds=thresholds,
        apcer=apcer_pts,
        bpcer=bpcer_pts,
        bpcer_at_apcer1=_interp_bpcer(apcer_pts, bpcer_pts, 1.0),
    )


def _interp_bpcer(apcer_pts, bpcer_pts, target):
    """Linear interpolation of BPCER at a given APCER operating point.

    Several thresholds can share one APCER value; the operating point takes
    the best (lowest) BPCER among them before interpolating.
    """
    uniq = np.unique(apcer_pts)
    best = np.array([bpcer_pts[apcer_pts == a].min() for a in uniq])
    return float(np.interp(target, uniq, best))


def roc_curve(samples):
    """(fpr, tpr) points: fpr = APCER/100, tpr = 1 - BPCER/100."""
    det = det_curve(samples)
    return det.apcer / 100.0, 1.0 - det.bpcer / 100.0


def roc_auc(samples) -> float:
    fpr, tpr = roc_curve(samples)
    order = np.argsort(fpr, kind="stable")
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(tpr[order], fpr[order]))
