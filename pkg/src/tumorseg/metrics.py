"""Tumour regions, confusion counts, DSC and sensitivity, and cohort reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

REGIONS = {
    "complete": (1, 2, 3, 4),
    "core": (1, 3, 4),
    "enhancing": (4,),
}


def region_mask(labels, region: str) -> np.ndarray:
    labels = np.asarray(labels)
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}; expected one of {list(REGIONS)}")
    bad = np.setdiff1d(np.unique(labels), (0, 1, 2, 3, 4))
    if bad.size:
        raise ValueError(f"labels outside {{0,1,2,3,4}}: {bad.tolist()}")
    return np.isin(labels, REGIONS[region]).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, truth) -> ConfusionCounts:
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != truth shape {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def dsc(c: ConfusionCounts) -> float:
    """2TP / (FP + 2TP + FN); 1.0 when both masks are empty."""
    denom = c.fp + 2 * c.tp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def sensitivity(c: ConfusionCounts) -> float:
    """TP / (TP + FN); 1.0 when the truth is empty."""
    denom = c.tp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def evaluate_case(pred, truth_labels) -> dict[str, tuple[float, float]]:
    """Per-region (DSC, sensitivity) for one case, pooled over all its voxels.

    ``pred`` is either a label map (regions derived from it like the truth) or
    a dict mapping region name to a binary mask predicted for that task.
    Regions missing from the dict are skipped.
    """
    truth_labels = np.asarray(truth_labels)
    if isinstance(pred, dict):
        masks = pred
    else:
        pred = np.asarray(pred)
        masks = {r: region_mask(pred, r) for r in REGIONS}
    out = {}
    for region, mask in masks.items():
        mask = np.asarray(mask)
        if mask.shape != truth_labels.shape:
            raise ValueError(f"{region}: prediction {mask.shape} vs truth {truth_labels.shape}")
        c = confusion(mask, region_mask(truth_labels, region))
        out[region] = (dsc(c), sensitivity(c))
    return out


@dataclass
class EvalReport:
    """Per-case metrics plus per-fold and per-cohort means.

    ``cases`` maps case id -> {"cohort", "fold", "metrics": {region: {"dsc", "sensitivity"}}}.
    ``summary`` maps cohort ("HGG", "LGG", "Combined") -> region -> metric ->
    mean over folds of the per-fold case means.
    """
    cases: dict = field(default_factory=dict)
    folds: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"cases": self.cases, "folds": self.folds, "summary": self.summary},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def to_csv(self, metric: str = "dsc") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Grade", "Complete", "Core", "Enhancing"])
        for grade in ("HGG", "LGG", "Combined"):
            if grade not in self.summary:
                continue
            row = [grade]
            for region in REGIONS:
                v = self.summary[grade].get(region, {}).get(metric)
                row.append("" if v is None else f"{v:.4f}")
            w.writerow(row)
        return buf.getvalue()


def _mean_metrics(entries: list[dict]) -> dict:
    out = {}
    for region in REGIONS:
        vals = [e[region] for e in entries if region in e]
        if vals:
            out[region] = {m: float(np.mean([v[m] for v in vals])) for m in ("dsc", "sensitivity")}
    return out


def aggregate(case_results: dict, folds: dict, cohorts: dict) -> EvalReport:
    """Combine per-case results into an :class:`EvalReport`.

    ``case_results``: case id -> output of :func:`evaluate_case`.
    ``folds``: fold name -> list of test case ids.  A case may be tested in
    only one fold.  ``cohorts``: case id -> "HGG" or "LGG".
    Means are unweighted over cases within a fold, then over folds.
    """
    fold_of = {}
    for name, ids in folds.items():
        for cid in ids:
            if cid in fold_of:
                raise ValueError(f"case {cid!r} appears in folds {fold_of[cid]!r} and {name!r}")
            fold_of[cid] = name
    missing = set(case_results) - set(fold_of)
    if missing:
        raise ValueError(f"cases without a fold: {sorted(missing)}")

    report = EvalReport()
    for cid, res in case_results.items():
        report.cases[cid] = {
            "cohort": cohorts[cid],
            "fold": fold_of[cid],
            "metrics": {r: {"dsc": d, "sensitivity": s} for r, (d, s) in res.items()},
        }
    for grade in ("HGG", "LGG", "Combined"):
        fold_means = {}
        for name, ids in folds.items():
            entries = [report.cases[c]["metrics"] for c in ids
                       if c in report.cases and (grade == "Combined" or cohorts[c] == grade)]
            if entries:
                fold_means[name] = _mean_metrics(entries)
        if not fold_means:
            continue
        report.folds[grade] = fold_means
        report.summary[grade] = _mean_metrics(list(fold_means.values()))
    return report
