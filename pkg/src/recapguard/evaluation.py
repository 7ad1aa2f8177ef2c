"""Classification metrics, ROC analysis, and robustness evaluation.

Conventions: the recaptured class is the positive (flagged) class. FPR is
the fraction of originals wrongly flagged, FNR the fraction of recaptures
wrongly permitted, and the empirical risk is their sum. The confusion matrix
is stored as counts[true_class][predicted_class] with class order
(original, recaptured).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .channel import DatasetManifest, LABEL_RECAPTURED
from .detector import Model, forward
from .errors import EmptyClassError, EmptySetError, ModelUnavailableError
from .imaging import ImageBuffer, PreprocessConfig, _gaussian_blur, _luma, load_image, preprocess

METRICS_SCHEMA = "recapguard/metrics/1"


@dataclass
class MetricsReport:
    accuracy: float
    precision_original: float
    recall_original: float
    f1: float
    avg_confidence: float
    high_conf_accuracy: float
    fpr: float
    fnr: float
    empirical_risk: float
    confusion_matrix: list

    def to_json(self) -> str:
        return json.dumps({"schema": METRICS_SCHEMA, **asdict(self)}, indent=2, sort_keys=True)


@dataclass
class ROCData:
    thresholds: list
    tpr: list
    fpr: list
    auc: float


def score_manifest(model: Model, manifest: DatasetManifest, batch_size: int = 32,
                   transform=None, pre_cfg: PreprocessConfig | None = None):
    """p_recap per manifest entry, optionally transforming decoded images.
    Entries are decoded and scored one batch at a time."""
    if model is None or not model.trained:
        raise ModelUnavailableError("no trained model loaded")
    if not manifest.entries:
        raise EmptySetError("manifest has no entries")
    labels, scores = [], []
    for start in range(0, len(manifest.entries), batch_size):
        tensors = []
        for i in range(start, min(start + batch_size, len(manifest.entries))):
            entry = manifest.entries[i]
            img = load_image(manifest.resolve(entry))
            if transform is not None:
                img = transform(i, entry, img)
            tensors.append(preprocess(img, pre_cfg))
            labels.append(1 if entry.label == LABEL_RECAPTURED else 0)
        pairs = forward(model, tensors, inference_mode=True)
        scores.extend(p.p_recap for p in pairs)
    return np.asarray(labels, dtype=np.int64), np.asarray(scores, dtype=np.float64)


def compute_metrics(labels, predictions, confidences=None) -> MetricsReport:
    """All report fields from parallel label/prediction (0/1) arrays."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.size == 0:
        raise EmptySetError("no items to evaluate")
    if confidences is None:
        confidences = np.ones_like(labels, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)

    cm = np.zeros((2, 2), dtype=np.int64)
    for t, p in zip(labels, predictions):
        cm[t, p] += 1
    orig_total = cm[0].sum()
    recap_total = cm[1].sum()
    pred_orig_total = cm[:, 0].sum()

    accuracy = float((cm[0, 0] + cm[1, 1]) / labels.size)
    recall_original = float(cm[0, 0] / orig_total) if orig_total else 0.0
    precision_original = float(cm[0, 0] / pred_orig_total) if pred_orig_total else 0.0
    if precision_original + recall_original > 0:
        f1 = 2 * precision_original * recall_original / (precision_original + recall_original)
    else:
        f1 = 0.0
    fpr = float(cm[0, 1] / orig_total) if orig_total else 0.0
    fnr = float(cm[1, 0] / recap_total) if recap_total else 0.0

    high_mask = confidences > 0.8
    if high_mask.any():
        high_conf_accuracy = float((labels[high_mask] == predictions[high_mask]).mean())
    else:
        high_conf_accuracy = None  # no prediction cleared the confidence bar

    return MetricsReport(
        accuracy=accuracy,
        precision_original=precision_original,
        recall_original=recall_original,
        f1=float(f1),
        avg_confidence=float(confidences.mean()),
        high_conf_accuracy=high_conf_accuracy,
        fpr=fpr,
        fnr=fnr,
        empirical_risk=fpr + fnr,
        confusion_matrix=cm.tolist(),
    )


def evaluate(model: Model, manifest: DatasetManifest, threshold: float = 0.5) -> MetricsReport:
    """Score the manifest and compute the full metric set at the threshold.
    Ties (p_recap == threshold) resolve to the original side."""
    labels, scores = score_manifest(model, manifest)
    predictions = (scores > threshold).astype(np.int64)
    confidences = np.maximum(scores, 1.0 - scores)
    return compute_metrics(labels, predictions, confidences)


def empirical_risk(labels, predictions) -> float:
    """Mean misclassification over originals plus mean over recaptures."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.size == 0 or (labels == 0).sum() == 0 or (labels == 1).sum() == 0:
        raise EmptyClassError("both classes must be present")
    orig_err = float((predictions[labels == 0] != 0).mean())
    recap_err = float((predictions[labels == 1] != 1).mean())
    return orig_err + recap_err


def roc_from_scores(labels, scores) -> ROCData:
    """Threshold sweep over the unique scores plus {0, 1}; trapezoid AUC."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.size == 0:
        raise EmptySetError("no items")
    if (labels == 0).sum() == 0 or (labels == 1).sum() == 0:
        raise EmptyClassError("both classes must be present")
    thresholds = sorted(set(scores.tolist()) | {0.0, 1.0}, reverse=True)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    tpr, fpr = [], []
    for theta in thresholds:
        flagged = scores > theta
        tpr.append(float((flagged & (labels == 1)).sum() / n_pos))
        fpr.append(float((flagged & (labels == 0)).sum() / n_neg))
    auc = float(np.trapezoid(tpr, fpr))
    return ROCData(thresholds=[float(t) for t in thresholds], tpr=tpr, fpr=fpr, auc=auc)


def roc_curve(model: Model, manifest: DatasetManifest) -> ROCData:
    labels, scores = score_manifest(model, manifest)
    return roc_from_scores(labels, scores)


def perturb_blur_contrast(img: ImageBuffer, blur_sigma: float, contrast_delta: float) -> ImageBuffer:
    """Gaussian blur plus a signed contrast change about the luma mean."""
    data = img.data
    if blur_sigma > 0:
        data = _gaussian_blur(data, blur_sigma)
    if contrast_delta != 0.0:
        mean = np.float32(_luma(data).mean())
        data = mean + (data - mean) * np.float32(1.0 + contrast_delta)
    return ImageBuffer(np.clip(data, 0.0, 1.0).astype(np.float32))


def robustness_eval(model: Model, manifest: DatasetManifest, threshold: float = 0.5,
                    blur_sigma: float = 1.5, contrast_frac: float = 0.15):
    """Re-evaluate with blur + alternating-sign contrast applied to the
    recaptured test items only; returns (clean_report, perturbed_report)."""

    def transform(i, entry, img):
        if entry.label != LABEL_RECAPTURED:
            return img
        sign = 1.0 if i % 2 == 0 else -1.0
        return perturb_blur_contrast(img, blur_sigma, sign * contrast_frac)

    labels, clean_scores = score_manifest(model, manifest)
    _, pert_scores = score_manifest(model, manifest, transform=transform)
    clean = compute_metrics(labels, (clean_scores > threshold).astype(np.int64),
                            np.maximum(clean_scores, 1 - clean_scores))
    perturbed = compute_metrics(labels, (pert_scores > threshold).astype(np.int64),
                                np.maximum(pert_scores, 1 - pert_scores))
    return clean, perturbed


def export_roc_plot(roc: ROCData, out) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(roc.fpr, roc.tpr, marker=".", label=f"AUC = {roc.auc:.4f}")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
