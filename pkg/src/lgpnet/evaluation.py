"""Metrics, score files, protocol parsing, and linear score fusion.

Scores are oriented so that larger means more bona fide.  A *miss* is a
bona fide trial scored below the threshold; a *false acceptance* is a
spoof trial scored at or above it.  Both summary metrics sweep every
threshold and are therefore invariant to strictly increasing score maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ProtocolError

LABELS = ("bonafide", "spoof")


@dataclass
class TrialRecord:
    utt_id: str
    label: str                    # bonafide | spoof | unknown
    score: float

    def __post_init__(self):
        if self.label not in ("bonafide", "spoof", "unknown"):
            raise ValueError(f"bad label {self.label!r}")
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite score for {self.utt_id!r}")


def split_scores(trials: Iterable[TrialRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona, spoof = [], []
    for t in trials:
        if t.label == "bonafide":
            bona.append(t.score)
        elif t.label == "spoof":
            spoof.append(t.score)
        else:
            raise ValueError(f"trial {t.utt_id!r} is unlabeled")
    return np.asarray(bona, dtype=np.float64), np.asarray(spoof, dtype=np.float64)


def detection_tradeoff(bona: np.ndarray, spoof: np.ndarray):
    """Miss/false-acceptance rates swept over every threshold.

    Thresholds are -inf, each distinct score, and +inf; at threshold t,
    P_miss = #(bona < t)/#bona and P_fa = #(spoof >= t)/#spoof.  Returns
    (thresholds, p_miss, p_fa) with p_miss non-decreasing and p_fa
    non-increasing.
    """
    bona = np.asarray(bona, dtype=np.float64)
    spoof = np.asarray(spoof, dtype=np.float64)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("need at least one trial of each class")
    thresholds = np.concatenate(
        [[-np.inf], np.unique(np.concatenate([bona, spoof])), [np.inf]]
    )
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    p_miss = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    p_fa = (spoof.size - np.searchsorted(spoof_sorted, thresholds, side="left")) / spoof.size
    return thresholds, p_miss, p_fa


def eer_from_scores(bona: np.ndarray, spoof: np.ndarray) -> tuple[float, float]:
    """Equal error rate and the threshold where miss and false-acceptance cross.

    The tradeoff is a step function, so the crossing is located by linear
    interpolation between the adjacent operating points.
    """
    thresholds, p_miss, p_fa = detection_tradeoff(bona, spoof)
    diff = p_miss - p_fa              # monotone from -1 to +1
    k = int(np.flatnonzero(diff >= 0.0)[0])
    if diff[k] == 0.0:
        return float((p_miss[k] + p_fa[k]) / 2.0), _finite(thresholds, k, k)
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    eer = (1.0 - alpha) * p_miss[k - 1] + alpha * p_miss[k]
    if np.isfinite(thresholds[k - 1]) and np.isfinite(thresholds[k]):
        thr = (1.0 - alpha) * thresholds[k - 1] + alpha * thresholds[k]
    else:
        thr = _finite(thresholds, k - 1, k)
    return float(eer), float(thr)


def _finite(thresholds, i, j) -> float:
    for idx in (i, j):
        if np.isfinite(thresholds[idx]):
            return float(thresholds[idx])
    return 0.0


def compute_eer(trials: Iterable[TrialRecord]) -> tuple[float, float]:
    return eer_from_scores(*split_scores(trials))


@dataclass
class TdcfCostModel:
    """Constants of the tandem cost, ASVspoof 2019 style.

    The priors and costs below are the published ASVspoof 2019 evaluation
    values; the three ASV error rates describe the fixed verification
    system the countermeasure is paired with and must come from that
    system's scores.
    """

    p_target: float = 0.9405
    p_nontarget: float = 0.0095
    p_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = 0.01
    p_fa_asv: float = 0.01
    p_miss_spoof_asv: float = 0.05

    def __post_init__(self):
        priors = (self.p_target, self.p_nontarget, self.p_spoof)
        if any(not 0.0 < p < 1.0 for p in priors):
            raise ValueError("priors must lie in (0, 1)")
        if abs(sum(priors) - 1.0) > 1e-6:
            raise ValueError(f"priors sum to {sum(priors)!r}, expected 1")
        if min(self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm) <= 0.0:
            raise ValueError("costs must be positive")
        for rate in (self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("ASV error rates must lie in [0, 1]")

    def coefficients(self) -> tuple[float, float]:
        """(C1, C2): weights of the countermeasure miss and false-acceptance rates."""
        c1 = (self.p_target * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
              - self.p_nontarget * self.c_fa_asv * self.p_fa_asv)
        c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv)
        if c1 <= 0.0 or c2 <= 0.0:
            raise ValueError(f"degenerate cost model: C1={c1}, C2={c2}")
        return c1, c2


def min_tdcf_from_scores(bona: np.ndarray, spoof: np.ndarray,
                         cost: TdcfCostModel) -> float:
    """Minimum normalized tandem cost over all countermeasure thresholds."""
    c1, c2 = cost.coefficients()
    _, p_miss, p_fa = detection_tradeoff(bona, spoof)
    tdcf = (c1 * p_miss + c2 * p_fa) / min(c1, c2)
    return float(tdcf.min())


def compute_min_tdcf(trials: Iterable[TrialRecord], cost: TdcfCostModel) -> float:
    return min_tdcf_from_scores(*split_scores(trials), cost)


# -- score fusion -------------------------------------------------------------


@dataclass
class FusionResult:
    weights: np.ndarray
    bias: float
    dev_eer: float
    fused_eval: dict[str, float]


def fuse_scores(dev_systems: Sequence[Mapping[str, float]],
                dev_labels: Mapping[str, str],
                eval_systems: Sequence[Mapping[str, float]] | None = None,
                grid_step: float = 0.01) -> FusionResult:
    """Pick convex weights minimizing dev EER; apply them to eval scores.

    All subsystems must cover identical trial ids on each partition.  The
    search walks the weight simplex at ``grid_step``, then locally refines
    the best vertex with pairwise golden-section line searches.  Ties are
    broken toward equal weights, then lexicographically, so the result is
    deterministic even when the dev fit is degenerate.  The additive bias
    of the linear fusion cannot move the EER, so it is fixed at 0.
    """
    if not dev_systems:
        raise ValueError("need at least one subsystem")
    ids = sorted(dev_systems[0])
    for k, system in enumerate(dev_systems):
        if sorted(system) != ids:
            raise ValueError(f"dev subsystem {k} covers different trial ids")
    missing = [u for u in ids if u not in dev_labels]
    if missing:
        raise ValueError(f"no label for trial {missing[0]!r}")

    scores = np.array([[system[u] for u in ids] for system in dev_systems])  # (K, n)
    is_bona = np.array([dev_labels[u] == "bonafide" for u in ids])

    def dev_eer(weights: np.ndarray) -> float:
        fused = weights @ scores
        return eer_from_scores(fused[is_bona], fused[~is_bona])[0]

    k = len(dev_systems)
    uniform = np.full(k, 1.0 / k)
    best_w, best_key = None, None
    for w in _simplex_grid(k, int(round(1.0 / grid_step))):
        w = np.asarray(w, dtype=np.float64)
        key = (dev_eer(w), float(((w - uniform) ** 2).sum()), tuple(w))
        if best_key is None or key < best_key:
            best_w, best_key = w, key

    best_w, best_eer = _refine_pairwise(best_w, best_key[0], dev_eer, grid_step)

    fused_eval: dict[str, float] = {}
    if eval_systems:
        if len(eval_systems) != k:
            raise ValueError("dev and eval subsystem counts differ")
        eval_ids = sorted(eval_systems[0])
        for j, system in enumerate(eval_systems):
            if sorted(system) != eval_ids:
                raise ValueError(f"eval subsystem {j} covers different trial ids")
        eval_scores = np.array([[system[u] for u in eval_ids] for system in eval_systems])
        fused = best_w @ eval_scores
        fused_eval = dict(zip(eval_ids, fused.tolist()))

    return FusionResult(weights=best_w, bias=0.0, dev_eer=best_eer, fused_eval=fused_eval)


def _simplex_grid(k: int, steps: int):
    """Integer compositions of ``steps`` into ``k`` parts, scaled to sum 1."""
    if k == 1:
        yield (1.0,)
        return
    for composition in _compositions(steps, k):
        yield tuple(c / steps for c in composition)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _refine_pairwise(w: np.ndarray, eer: float, objective, step: float,
                     sweeps: int = 2, iters: int = 24):
    """Golden-section line searches between coordinate pairs around the grid optimum."""
    w = w.copy()
    k = w.shape[0]
    for _ in range(sweeps):
        improved = False
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                lo = -min(step, float(w[j]))
                hi = min(step, float(w[i]))
                if hi - lo <= 1e-12:
                    continue
                direction = np.zeros(k)
                direction[i] = -1.0
                direction[j] = 1.0
                t, val = _golden_section(lambda t: objective(w + t * direction), lo, hi, iters)
                if val < eer:
                    w = w + t * direction
                    eer = val
                    improved = True
        if not improved:
            break
    return w, eer


def _golden_section(f, lo: float, hi: float, iters: int) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    t = c if fc <= fd else d
    return t, min(fc, fd)


# -- text formats -------------------------------------------------------------


def _read_two_columns(path, what: str):
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != 2:
                raise ProtocolError(
                    f"{path}: expected 'utt_id {what}', got {len(fields)} fields", line=lineno
                )
            utt_id, value = fields
            if utt_id in seen:
                raise ProtocolError(f"{path}: duplicate utterance id {utt_id!r}", line=lineno)
            seen.add(utt_id)
            rows.append((lineno, utt_id, value))
    return rows


def read_protocol(path) -> dict[str, str]:
    """Parse ``utt_id label`` lines; labels must be bonafide or spoof."""
    out: dict[str, str] = {}
    for lineno, utt_id, label in _read_two_columns(path, "label"):
        if label not in LABELS:
            raise ProtocolError(f"{path}: unknown label {label!r}", line=lineno)
        out[utt_id] = label
    if not out:
        raise ProtocolError(f"{path}: empty protocol")
    return out


def write_protocol(path, labels: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, label in labels.items():
            if label not in LABELS:
                raise ValueError(f"unknown label {label!r}")
            fh.write(f"{utt_id} {label}\n")


def read_scores(path) -> dict[str, float]:
    """Parse ``utt_id score`` lines; scores must be finite decimals."""
    out: dict[str, float] = {}
    for lineno, utt_id, text in _read_two_columns(path, "score"):
        try:
            value = float(text)
        except ValueError:
            raise ProtocolError(f"{path}: bad score {text!r}", line=lineno) from None
        if not np.isfinite(value):
            raise ProtocolError(f"{path}: non-finite score {text!r}", line=lineno)
        out[utt_id] = value
    if not out:
        raise ProtocolError(f"{path}: empty score file")
    return out


def write_scores(path, scores: Mapping[str, float]) -> None:
    """Full-precision score lines; reading them back reproduces the floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, score in scores.items():
            fh.write(f"{utt_id} {float(score)!r}\n")


def trials_from_files(score_path, protocol_path) -> list[TrialRecord]:
    """Join a score file with a protocol by utterance id."""
    scores = read_scores(score_path)
    labels = read_protocol(protocol_path)
    missing = [u for u in scores if u not in labels]
    if missing:
        raise ProtocolError(f"{protocol_path}: no label for scored trial {missing[0]!r}")
    return [TrialRecord(u, labels[u], s) for u, s in scores.items()]
