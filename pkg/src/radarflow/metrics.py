"""Forecast verification: contingency tables, CSI/HSS/MSE, lead-time curves.

Counts are pooled over the whole evaluation set before ratios are formed, and
thresholding is non-strict (value >= threshold counts as an event). Zero
denominators fall back to 0 for both CSI and HSS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLD_PRESETS = {
    "sevir": (16.0, 74.0, 133.0, 160.0, 181.0, 219.0),
    "meteonet": (12.0, 18.0, 24.0, 32.0),
    "shanghai": (20.0, 30.0, 35.0, 40.0),
    "cikm": (20.0, 30.0, 35.0, 40.0),
}


@dataclass(frozen=True)
class ContingencyTable:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("contingency counts must be nonnegative")

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(self.tp + other.tp, self.fp + other.fp,
                                self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ThresholdSet:
    dataset_id: str
    thresholds: tuple

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        if not ts:
            raise ValueError("threshold set must be nonempty")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {ts}")
        object.__setattr__(self, "thresholds", ts)


def resolve_thresholds(spec: str) -> ThresholdSet:
    """Parse a preset name or "custom:v1,v2,..." into a ThresholdSet."""
    if spec in THRESHOLD_PRESETS:
        return ThresholdSet(spec, THRESHOLD_PRESETS[spec])
    if spec.startswith("custom:"):
        values = tuple(float(v) for v in spec[len("custom:"):].split(","))
        return ThresholdSet("custom", values)
    raise ValueError(f"unknown threshold spec {spec!r}; presets: {sorted(THRESHOLD_PRESETS)}")


def accumulate(pred: np.ndarray, obs: np.ndarray, threshold: float) -> ContingencyTable:
    """Pool pixel-wise event counts at one threshold over all frames."""
    pred = np.asarray(pred)
    obs = np.asarray(obs)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs obs {obs.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(obs).all()):
        raise ValueError("non-finite values in pred/obs")
    p = pred >= threshold
    o = obs >= threshold
    tp = int(np.count_nonzero(p & o))
    fp = int(np.count_nonzero(p & ~o))
    fn = int(np.count_nonzero(~p & o))
    tn = int(np.count_nonzero(~p & ~o))
    return ContingencyTable(tp, fp, fn, tn)


def csi(table: ContingencyTable) -> float:
    denom = table.tp + table.fn + table.fp
    if denom == 0:
        return 0.0
    return table.tp / denom


def hss(table: ContingencyTable) -> float:
    tp, fp, fn, tn = table.tp, table.fp, table.fn, table.tn
    denom = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn)
    if denom == 0:
        return 0.0
    return 2.0 * (tp * tn - fn * fp) / denom


def per_threshold_tables(pred, obs, threshold_set: ThresholdSet) -> dict:
    return {t: accumulate(pred, obs, t) for t in threshold_set.thresholds}


def csi_m(pred, obs, threshold_set: ThresholdSet) -> float:
    tables = per_threshold_tables(pred, obs, threshold_set)
    return float(np.mean([csi(t) for t in tables.values()]))


def hss_m(pred, obs, threshold_set: ThresholdSet) -> float:
    tables = per_threshold_tables(pred, obs, threshold_set)
    return float(np.mean([hss(t) for t in tables.values()]))


def mse(pred: np.ndarray, obs: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs obs {obs.shape}")
    return float(np.mean((pred - obs) ** 2))


def lead_time_curves(preds: np.ndarray, obs: np.ndarray,
                     threshold_set: ThresholdSet) -> dict:
    """Per-lead-step CSI-M and HSS over a stack of forecasts.

    preds/obs are (N, K, H, W); step k pools tables over the N samples at
    that lead only. HSS is reported as the mean over the threshold set.
    """
    preds = np.asarray(preds)
    obs = np.asarray(obs)
    if preds.shape != obs.shape:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs obs {obs.shape}")
    if preds.ndim != 4:
        raise ValueError(f"expected (N, K, H, W), got shape {preds.shape}")
    k = preds.shape[1]
    csi_series, hss_series = [], []
    for step in range(k):
        csi_series.append(csi_m(preds[:, step], obs[:, step], threshold_set))
        hss_series.append(hss_m(preds[:, step], obs[:, step], threshold_set))
    return {"csi_m": csi_series, "hss": hss_series}


def summarize(preds, obs, threshold_set: ThresholdSet) -> dict:
    """Full verification summary used by the report writer."""
    tables = per_threshold_tables(preds, obs, threshold_set)
    per_threshold = {
        f"{t:g}": {
            "csi": csi(tab),
            "hss": hss(tab),
            "counts": {"tp": tab.tp, "fp": tab.fp, "fn": tab.fn, "tn": tab.tn},
        }
        for t, tab in tables.items()
    }
    return {
        "dataset_id": threshold_set.dataset_id,
        "thresholds": list(threshold_set.thresholds),
        "per_threshold": per_threshold,
        "csi_m": float(np.mean([csi(t) for t in tables.values()])),
        "hss_m": float(np.mean([hss(t) for t in tables.values()])),
        "mse": mse(preds, obs),
        "lead_time": lead_time_curves(preds, obs, threshold_set),
    }
