"""Ensemble aggregation, predictive metrics and diversity measures.

Prediction matrices are ``(examples, classes)`` arrays of probabilities; a
list of them (one per learner) must share example order.  Every ``log`` is
taken after flooring probabilities at ``PROB_FLOOR``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from decimal import Decimal, localcontext
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

PROB_FLOOR = 1e-12


def _check_aligned(preds) -> list[np.ndarray]:
    mats = [np.asarray(p, dtype=np.float64) for p in preds]
    if not mats:
        raise ValueError("need at least one prediction matrix")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ValueError(f"misaligned prediction matrices: {m.shape} vs {shape}")
    return mats


def ensemble_average(preds) -> np.ndarray:
    mats = _check_aligned(preds)
    return np.mean(np.stack(mats), axis=0)


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(preds, axis=1) == np.asarray(labels)))


def nll(preds: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    p = preds[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def ece(preds: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Expected calibration error over equal-width bins ``(b/B, (b+1)/B]``."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    conf = np.max(preds, axis=1)
    correct = (np.argmax(preds, axis=1) == np.asarray(labels)).astype(np.float64)
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    n = len(conf)
    total = 0.0
    for b in range(bins):
        sel = idx == b
        nb = int(sel.sum())
        if nb:
            total += nb / n * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def auroc_ood(in_dist_preds: np.ndarray, ood_preds: np.ndarray) -> float:
    """AUROC of max-probability scores, in-distribution as the positive class."""
    s_in = np.max(in_dist_preds, axis=1)
    s_out = np.max(ood_preds, axis=1)
    n_in, n_out = len(s_in), len(s_out)
    if not n_in or not n_out:
        raise ValueError("both score sets must be nonempty")
    ranks = rankdata(np.concatenate([s_in, s_out]), method="average")
    u = np.sum(ranks[:n_in]) - n_in * (n_in + 1) / 2.0
    return float(u / (n_in * n_out))


def disagreement(p1: np.ndarray, p2: np.ndarray) -> float:
    p1, p2 = _check_aligned([p1, p2])
    return float(np.mean(np.argmax(p1, axis=1) != np.argmax(p2, axis=1)))


def _kl_terms(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    a = np.maximum(p1, PROB_FLOOR)
    b = np.maximum(p2, PROB_FLOOR)
    return p1 * (np.log(a) - np.log(b))


def pairwise_kl(p1: np.ndarray, p2: np.ndarray) -> float:
    """Mean over examples of KL(p1 || p2)."""
    p1, p2 = _check_aligned([p1, p2])
    return math.fsum(_kl_terms(p1, p2).ravel()) / len(p1)


def ensemble_diversity(preds) -> dict[str, float]:
    """Mean of d_dis and d_KL over all ordered learner pairs.

    Both are one correctly rounded total divided once, so the result does not
    depend on example or learner order.
    """
    mats = _check_aligned(preds)
    m = len(mats)
    if m < 2:
        raise ValueError("diversity needs at least two learners")
    labels = [np.argmax(p, axis=1) for p in mats]
    differ, terms = 0, []
    for i in range(m):
        for j in range(m):
            if i != j:
                differ += int(np.count_nonzero(labels[i] != labels[j]))
                terms.append(_kl_terms(mats[i], mats[j]).ravel())
    total = m * (m - 1) * len(mats[0])
    return {"d_dis": differ / total, "d_KL": math.fsum(np.concatenate(terms)) / total}


def ensemble_size_sweep(preds, labels) -> list[dict]:
    mats = _check_aligned(preds)
    rows = []
    for m in range(1, len(mats) + 1):
        ens = ensemble_average(mats[:m])
        ind_acc = [accuracy(p, labels) for p in mats[:m]]
        ind_nll = [nll(p, labels) for p in mats[:m]]
        rows.append({
            "m": m,
            "ensemble_acc": accuracy(ens, labels),
            "ensemble_nll": nll(ens, labels),
            "individual_acc_mean": float(np.mean(ind_acc)),
            "individual_acc_std": float(np.std(ind_acc)),
            "individual_nll_mean": float(np.mean(ind_nll)),
        })
    return rows


def _decimal_nll(p: Decimal) -> Decimal:
    return -p.ln() if p > 0 else Decimal("Infinity")


def jensen_holds(preds, labels, strict: bool = False) -> bool:
    """Per-example check that the ensemble NLL never exceeds the mean member NLL.

    Compared on the raw probabilities (no floor).  Rows that fail in float
    arithmetic are re-checked with 60-digit decimals, so rounding alone never
    flags a violation.  With ``strict`` the inequality must be strict on every
    example whose member probabilities are not all identical.
    """
    mats = _check_aligned(preds)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    p = np.stack([m[rows, labels] for m in mats])  # (learners, examples)
    with np.errstate(divide="ignore"):
        member = np.mean(-np.log(p), axis=0)
        ens = -np.log(np.mean(p, axis=0))
    differ = np.any(p != p[0], axis=0)
    ok = ens < member if strict else ens <= member
    ok |= ~differ
    with localcontext() as ctx:
        ctx.prec = 60
        for i in np.flatnonzero(~ok):
            col = [Decimal(float(v)) for v in p[:, i]]
            e = _decimal_nll(sum(col) / len(col))
            m = sum(_decimal_nll(v) for v in col) / len(col)
            if (e >= m) if strict else (e > m):
                return False
    return True


@dataclass
class MetricsReport:
    acc: float
    nll: float
    ece: float
    corrupted: dict[str, dict[str, float]] = field(default_factory=dict)
    auroc: float | None = None
    d_dis: float | None = None
    d_KL: float | None = None

    def flat(self) -> dict[str, float | None]:
        out = {"acc": self.acc, "nll": self.nll, "ece": self.ece}
        for name, vals in sorted(self.corrupted.items()):
            for k in ("cAcc", "cNLL", "cECE"):
                out[f"{name}.{k}"] = vals[k]
        out["auroc"] = self.auroc
        out["d_dis"] = self.d_dis
        out["d_KL"] = self.d_KL
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate(preds: np.ndarray, labels: np.ndarray, bins: int = 15,
             corrupted: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
             ood_preds: np.ndarray | None = None) -> MetricsReport:
    report = MetricsReport(accuracy(preds, labels), nll(preds, labels), ece(preds, labels, bins))
    for name, (cp, cl) in (corrupted or {}).items():
        report.corrupted[name] = {"cAcc": accuracy(cp, cl), "cNLL": nll(cp, cl),
                                  "cECE": ece(cp, cl, bins)}
    if ood_preds is not None:
        report.auroc = auroc_ood(preds, ood_preds)
    return report


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0].keys())
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k]))
                         for k in fields})
    return buf.getvalue()
