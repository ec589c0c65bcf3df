"""Equal error rate from countermeasure scores.

Scores are oriented so that higher means more bona fide. A trial is accepted
when ``score >= threshold``. False acceptance (FAR) counts accepted spoofs,
false rejection (FRR) counts rejected bona fide trials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

BONAFIDE = "bonafide"
SPOOF = "spoof"


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    score: float
    label: Optional[str] = None  # "bonafide" | "spoof"
    attack: Optional[str] = None


def operating_points(bona: np.ndarray, spoof: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR and FRR at every distinct score used as threshold, plus +inf.

    Returned arrays are ordered by increasing threshold, so FAR falls and FRR
    rises along them.
    """
    bona = np.sort(np.asarray(bona, dtype=np.float64))
    spoof = np.sort(np.asarray(spoof, dtype=np.float64))
    thresholds = np.unique(np.concatenate([bona, spoof]))
    # counts strictly below each threshold are rejected
    frr = np.searchsorted(bona, thresholds, side="left") / bona.size
    far = 1.0 - np.searchsorted(spoof, thresholds, side="left") / spoof.size
    thresholds = np.append(thresholds, np.inf)
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)
    return thresholds, far, frr


def compute_eer(bona_scores: Sequence[float], spoof_scores: Sequence[float]) -> Tuple[float, float]:
    """EER and its threshold, interpolating linearly where FAR - FRR changes sign.

    >>> compute_eer([0.9, 0.8], [0.1, 0.2])[0]
    0.0
    """
    bona = np.asarray(bona_scores, dtype=np.float64)
    spoof = np.asarray(spoof_scores, dtype=np.float64)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs at least one bona fide and one spoof score")
    if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(spoof))):
        raise ValueError("scores must be finite")
    thr, far, frr = operating_points(bona, spoof)
    diff = far - frr  # starts at 1 - 0 > 0, ends at 0 - 1 < 0
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(far[i]), float(thr[i])
    # crossing lies between points i-1 and i
    s = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + s * (far[i] - far[i - 1])
    t0, t1 = thr[i - 1], thr[i]
    threshold = t0 + s * (t1 - t0) if np.isfinite(t1) else t0
    return float(eer), float(threshold)


def eer_from_records(records: Iterable[ScoreRecord]) -> Tuple[float, float]:
    records = list(records)
    bona = [r.score for r in records if r.label == BONAFIDE]
    spoof = [r.score for r in records if r.label == SPOOF]
    if not bona or not spoof:
        raise ValueError("EER needs records of both classes")
    return compute_eer(bona, spoof)


def per_attack_report(records: Iterable[ScoreRecord], known_attacks: Optional[Iterable[str]] = None) -> List[Dict]:
    """One row per attack (each spoof subset against all bona fide trials) plus a pooled row.

    Spoof records with a missing attack id, or one outside ``known_attacks``
    when that is given, are grouped under "other".
    """
    records = list(records)
    bona = [r.score for r in records if r.label == BONAFIDE]
    known = set(known_attacks) if known_attacks is not None else None
    groups: Dict[str, List[float]] = {}
    for r in records:
        if r.label != SPOOF:
            continue
        key = r.attack if r.attack and r.attack != "-" else "other"
        if known is not None and key not in known:
            key = "other"
        groups.setdefault(key, []).append(r.score)
    rows = []
    for attack in sorted(groups):
        eer, thr = compute_eer(bona, groups[attack])
        rows.append({"attack": attack, "n_spoof": len(groups[attack]), "eer": eer, "threshold": thr})
    all_spoof = [s for v in groups.values() for s in v]
    eer, thr = compute_eer(bona, all_spoof)
    rows.append({"attack": "pooled", "n_spoof": len(all_spoof), "eer": eer, "threshold": thr})
    return rows


def format_report(rows: List[Dict], n_bona: Optional[int] = None, sep: str = "\t") -> str:
    header = sep.join(["attack", "n_spoof", "eer_percent", "threshold"])
    lines = [header]
    for r in rows:
        lines.append(sep.join([r["attack"], str(r["n_spoof"]), f"{100.0 * r['eer']:.4f}", f"{r['threshold']:.6g}"]))
    if n_bona is not None:
        lines.append(f"# bona fide trials: {n_bona}")
    return "\n".join(lines) + "\n"
