"""Subjective-study analytics.

Rank and linear correlation, maximum-likelihood recovery of true scores
from noisy raters, split-half inter-subject consistency, and golden /
repeated-video screening of individual subjects.

The recovery model treats rating ``u[e, s]`` of video ``e`` by subject ``s``
as ``psi[e] + delta[s] + nu[s] * eps`` with standard-normal ``eps``; biases
are identified by ``sum(delta) == 0``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import rankdata

RATING_FIELDS = ("video_id", "subject_id", "rating", "session", "is_golden", "is_repeat")


# ---------------------------------------------------------------------------
# correlation


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-D sequences of equal length")
    if len(a) < 3:
        raise ValueError("correlation needs at least 3 points")
    return a, b


def _pearson(a, b):
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise ValueError("undefined correlation: zero variance input")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def lcc(a, b) -> float:
    """Pearson linear correlation coefficient."""
    return _pearson(*_pair(a, b))


def srcc(a, b) -> float:
    """Spearman rank correlation; tied values share their mean rank."""
    a, b = _pair(a, b)
    return _pearson(rankdata(a), rankdata(b))


# ---------------------------------------------------------------------------
# ratings table


@dataclass
class RatingsTable:
    video_id: list
    subject_id: list
    rating: np.ndarray
    session: np.ndarray = None
    is_golden: np.ndarray = None
    is_repeat: np.ndarray = None

    def __post_init__(self):
        n = len(self.video_id)
        self.video_id = [str(v) for v in self.video_id]
        self.subject_id = [str(s) for s in self.subject_id]
        self.rating = np.asarray(self.rating, dtype=np.float64)
        self.session = np.zeros(n, int) if self.session is None else np.asarray(self.session, int)
        self.is_golden = np.zeros(n, bool) if self.is_golden is None else np.asarray(self.is_golden, bool)
        self.is_repeat = np.zeros(n, bool) if self.is_repeat is None else np.asarray(self.is_repeat, bool)
        if not all(len(x) == n for x in (self.subject_id, self.rating, self.session,
                                         self.is_golden, self.is_repeat)):
            raise ValueError("ratings table columns differ in length")
        if not np.all(np.isfinite(self.rating)):
            raise ValueError("non-finite rating")

    def __len__(self):
        return len(self.video_id)

    @classmethod
    def from_matrix(cls, U: np.ndarray, videos: Optional[Sequence] = None,
                    subjects: Optional[Sequence] = None) -> "RatingsTable":
        """Table from a videos x subjects matrix; NaN marks a missing rating."""
        U = np.asarray(U, dtype=np.float64)
        videos = list(videos) if videos is not None else [f"v{i}" for i in range(U.shape[0])]
        subjects = list(subjects) if subjects is not None else [f"s{j}" for j in range(U.shape[1])]
        e, s = np.nonzero(np.isfinite(U))
        return cls([videos[i] for i in e], [subjects[j] for j in s], U[e, s])

    def matrix(self, include_repeats: bool = False):
        """``(videos, subjects, U)``; duplicate (video, subject) ratings are averaged.

        Rows and columns follow first appearance in the table.
        """
        keep = np.ones(len(self), bool) if include_repeats else ~self.is_repeat
        videos = list(dict.fromkeys(v for v, k in zip(self.video_id, keep) if k))
        subjects = list(dict.fromkeys(s for s, k in zip(self.subject_id, keep) if k))
        vi = {v: i for i, v in enumerate(videos)}
        si = {s: j for j, s in enumerate(subjects)}
        total = np.zeros((len(videos), len(subjects)))
        count = np.zeros_like(total)
        for v, s, r, k in zip(self.video_id, self.subject_id, self.rating, keep):
            if k:
                total[vi[v], si[s]] += r
                count[vi[v], si[s]] += 1
        with np.errstate(invalid="ignore"):
            U = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        return videos, subjects, U


def _truthy(x: str) -> bool:
    return str(x).strip().lower() in ("1", "true", "yes", "y", "t")


def read_ratings(path, scale: Sequence[float] = (1.0, 5.0), delimiter: str = ",") -> RatingsTable:
    """Read a delimited ratings file, mapping the raw ``scale`` onto [1, 5]."""
    lo, hi = scale
    if not lo < hi:
        raise ValueError("rating scale must be increasing")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = set(RATING_FIELDS[:3]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"ratings file lacks columns {sorted(missing)}")
        rows = list(reader)
    raw = np.array([float(r["rating"]) for r in rows])
    if raw.size and (raw.min() < lo or raw.max() > hi):
        raise ValueError(f"ratings outside the declared scale [{lo}, {hi}]")
    return RatingsTable(
        [r["video_id"] for r in rows],
        [r["subject_id"] for r in rows],
        1.0 + 4.0 * (raw - lo) / (hi - lo),
        [int(r.get("session") or 0) for r in rows],
        [_truthy(r.get("is_golden", "0")) for r in rows],
        [_truthy(r.get("is_repeat", "0")) for r in rows],
    )


def write_ratings(path, table: RatingsTable, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(RATING_FIELDS)
        for row in zip(table.video_id, table.subject_id, table.rating, table.session,
                       table.is_golden, table.is_repeat):
            w.writerow([row[0], row[1], repr(float(row[2])), int(row[3]), int(row[4]), int(row[5])])


# ---------------------------------------------------------------------------
# score recovery


@dataclass
class RecoveredScores:
    psi: np.ndarray
    delta: np.ndarray
    nu: np.ndarray
    loglik: list
    converged: bool
    n_iter: int
    psi_se: np.ndarray
    videos: list = field(default_factory=list)
    subjects: list = field(default_factory=list)

    def ci95(self):
        return self.psi - 1.96 * self.psi_se, self.psi + 1.96 * self.psi_se


def _loglik(U, mask, psi, delta, nu):
    resid = np.where(mask, U - psi[:, None] - delta[None, :], 0.0)
    var = nu**2
    n_s = mask.sum(axis=0)
    return float(-0.5 * np.sum(n_s * np.log(2 * np.pi * var)) - 0.5 * np.sum(resid**2 / var[None, :]))


def _check_design(mask):
    if np.any(mask.sum(axis=0) < 2):
        raise ValueError("every subject must rate at least two videos")
    if np.any(mask.sum(axis=1) < 2):
        raise ValueError("every video must be rated by at least two subjects")
    V, S = mask.shape
    e, s = np.nonzero(mask)
    graph = coo_matrix((np.ones(len(e)), (e, V + s)), shape=(V + S, V + S))
    n, _ = connected_components(graph, directed=False)
    if n > 1:
        raise ValueError("rating graph is disconnected; biases are not identifiable")


def recover_matrix(U: np.ndarray, tol: float = 1e-8, max_iter: int = 1000, eps: float = 1e-3) -> RecoveredScores:
    """Alternating maximum-likelihood updates on a videos x subjects matrix (NaN = missing)."""
    U = np.asarray(U, dtype=np.float64)
    mask = np.isfinite(U)
    _check_design(mask)
    Uz = np.where(mask, U, 0.0)
    n_s = mask.sum(axis=0)
    psi = Uz.sum(axis=1) / mask.sum(axis=1)
    delta = np.zeros(U.shape[1])
    nu = np.ones(U.shape[1])
    trace = [_loglik(U, mask, psi, delta, nu)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mask / nu[None, :] ** 2
        new_psi = np.sum(w * (Uz - delta[None, :]), axis=1) / w.sum(axis=1)
        new_delta = np.sum(np.where(mask, Uz - new_psi[:, None], 0.0), axis=0) / n_s
        shift = new_delta.mean()
        new_delta -= shift
        new_psi += shift  # keeps the likelihood unchanged while centring the biases
        resid = np.where(mask, Uz - new_psi[:, None] - new_delta[None, :], 0.0)
        new_nu = np.sqrt(np.maximum((resid**2).sum(axis=0) / n_s, eps**2))
        change = max(np.abs(new_psi - psi).max(), np.abs(new_delta - delta).max(), np.abs(new_nu - nu).max())
        psi, delta, nu = new_psi, new_delta, new_nu
        trace.append(_loglik(U, mask, psi, delta, nu))
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"score recovery did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    se = 1.0 / np.sqrt((mask / nu[None, :] ** 2).sum(axis=1))
    return RecoveredScores(psi, delta, nu, trace, converged, it, se)


def recover_scores(table: RatingsTable, tol: float = 1e-8, max_iter: int = 1000, eps: float = 1e-3) -> RecoveredScores:
    videos, subjects, U = table.matrix()
    out = recover_matrix(U, tol, max_iter, eps)
    out.videos, out.subjects = videos, subjects
    return out


# ---------------------------------------------------------------------------
# consistency


def split_half_consistency(table, n_splits: int = 50, seed: int = 0) -> float:
    """Mean SRCC between per-video mean ratings of two random disjoint subject halves.

    ``table`` is a :class:`RatingsTable` or a videos x subjects matrix. With
    an odd subject count one subject sits out of each split.
    """
    U = table.matrix()[2] if isinstance(table, RatingsTable) else np.asarray(table, dtype=np.float64)
    n_sub = U.shape[1]
    if n_sub < 4:
        raise ValueError("split-half consistency needs at least 4 subjects")
    rng = np.random.default_rng(seed)
    half = n_sub // 2
    values = []
    for _ in range(n_splits):
        perm = rng.permutation(n_sub)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            a = np.nanmean(U[:, perm[:half]], axis=1)
            b = np.nanmean(U[:, perm[half : 2 * half]], axis=1)
        ok = np.isfinite(a) & np.isfinite(b)
        values.append(srcc(a[ok], b[ok]))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# subject screening


@dataclass
class ScreenResult:
    lcc: float
    passed: bool
    reason: str = ""


def _screen(ratings, reference, threshold, min_std, what):
    ratings = np.asarray(ratings, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if ratings.shape != reference.shape or len(ratings) < 3:
        raise ValueError(f"{what} screening needs at least 3 paired ratings")
    if ratings.std() <= min_std:
        return ScreenResult(float("nan"), False, "degenerate rater")
    if reference.std() <= min_std:
        return ScreenResult(float("nan"), False, f"degenerate {what} reference")
    r = lcc(ratings, reference)
    if r >= threshold:
        return ScreenResult(r, True, "")
    return ScreenResult(r, False, f"{what} lcc {r:.3f} below {threshold}")


def golden_check(ratings, golden_mos, threshold: float = 0.5, min_std: float = 1e-6) -> ScreenResult:
    """Pass a subject whose golden-video ratings correlate with the known scores."""
    return _screen(ratings, golden_mos, threshold, min_std, "golden")


def repeat_check(first, second, threshold: float = 0.5, min_std: float = 1e-6) -> ScreenResult:
    """Pass a subject whose ratings of repeated videos agree across session halves."""
    return _screen(first, second, threshold, min_std, "repeat")


def screen_subjects(table: RatingsTable, golden_mos: Optional[dict] = None, threshold: float = 0.5) -> dict:
    """Per-subject golden and repeat screening; ``None`` where too few items exist."""
    out = {}
    for subj in sorted(set(table.subject_id)):
        rows = [i for i, s in enumerate(table.subject_id) if s == subj]
        first = {}
        for i in rows:
            if not table.is_repeat[i]:
                first.setdefault(table.video_id[i], table.rating[i])
        golden = None
        if golden_mos:
            g = [(table.rating[i], golden_mos[table.video_id[i]]) for i in rows
                 if table.is_golden[i] and not table.is_repeat[i] and table.video_id[i] in golden_mos]
            if len(g) >= 3:
                golden = golden_check([a for a, _ in g], [b for _, b in g], threshold)
        pairs = [(first[table.video_id[i]], table.rating[i]) for i in rows
                 if table.is_repeat[i] and table.video_id[i] in first]
        repeat = repeat_check([a for a, _ in pairs], [b for _, b in pairs], threshold) if len(pairs) >= 3 else None
        out[subj] = {"golden": golden, "repeat": repeat}
    return out


def study_report(table: RatingsTable, rec: RecoveredScores, screening: Optional[dict] = None) -> dict:
    """JSON-ready summary of recovery and screening."""
    lo, hi = rec.ci95()
    screening = screening or {}

    def _res(r):
        return None if r is None else {"lcc": None if math.isnan(r.lcc) else r.lcc,
                                       "pass": r.passed, "reason": r.reason}

    subjects = []
    for j, s in enumerate(rec.subjects):
        sc = screening.get(s, {})
        checks = [c for c in (sc.get("golden"), sc.get("repeat")) if c is not None]
        subjects.append({
            "subject_id": s,
            "delta": float(rec.delta[j]),
            "nu": float(rec.nu[j]),
            "golden": _res(sc.get("golden")),
            "repeat": _res(sc.get("repeat")),
            "pass": all(c.passed for c in checks) if checks else None,
        })
    videos = [{"video_id": v, "psi": float(rec.psi[i]), "ci95": [float(lo[i]), float(hi[i])]}
              for i, v in enumerate(rec.videos)]
    return {"n_ratings": len(table), "converged": rec.converged, "n_iter": rec.n_iter,
            "loglik": rec.loglik[-1], "subjects": subjects, "videos": videos}
