"""Gland-challenge evaluation: object matching, detection F1, object-level
Dice and Hausdorff, and standard competition ranking.

Masks are integer label planes (0 = background).  Object ids do not need
to be contiguous.  Object-level scores pair every object with the
counterpart of maximal pixel overlap, ties going to the smaller id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from dcan.morphology import instance_boundary
from dcan.tensor import ShapeError


@dataclass
class MatchStats:
    n_tp: int
    n_fp: int
    n_fn: int
    pairing: dict = field(default_factory=dict)  # seg id -> matched gt id (or None)


@dataclass
class ObjectTerms:
    """Unnormalised sums of one object-level metric for one or more images.

    ``seg_sum`` is sum_i |S_i| * M(G_i, S_i) and ``seg_area`` is sum_i |S_i|;
    the ``gt_*`` fields are the same over ground-truth objects.  Keeping
    the raw sums lets several images be pooled before normalising.
    """

    seg_sum: float = 0.0
    seg_area: int = 0
    gt_sum: float = 0.0
    gt_area: int = 0

    def __add__(self, other: "ObjectTerms") -> "ObjectTerms":
        return ObjectTerms(self.seg_sum + other.seg_sum, self.seg_area + other.seg_area,
                           self.gt_sum + other.gt_sum, self.gt_area + other.gt_area)


def _check_pair(seg, gt):
    seg, gt = np.asarray(seg), np.asarray(gt)
    if seg.shape != gt.shape:
        raise ShapeError(f"segmentation {seg.shape} and ground truth {gt.shape} differ in shape")
    return seg, gt


def _ids(lab: np.ndarray) -> np.ndarray:
    ids = np.unique(lab)
    return ids[ids > 0]


def _overlap_table(seg, gt):
    """Return (seg ids, gt ids, overlap counts[seg, gt], seg areas, gt areas)."""
    s_ids, g_ids = _ids(seg), _ids(gt)
    s_idx = np.searchsorted(s_ids, seg.ravel())
    g_idx = np.searchsorted(g_ids, gt.ravel())
    fg = (seg.ravel() > 0) & (gt.ravel() > 0)
    ns, ng = len(s_ids), len(g_ids)
    overlap = np.bincount(s_idx[fg] * ng + g_idx[fg], minlength=ns * ng).reshape(ns, ng)
    s_area = np.bincount(s_idx[seg.ravel() > 0], minlength=ns)
    g_area = np.bincount(g_idx[gt.ravel() > 0], minlength=ng)
    return s_ids, g_ids, overlap, s_area, g_area


def match_objects(seg: np.ndarray, gt: np.ndarray) -> MatchStats:
    """Count true/false positives and false negatives with the 50% rule.

    A segmented object is a true positive when it covers at least half of the
    ground-truth object it overlaps most.  If two segmented objects qualify
    for the same ground-truth object the larger overlap wins (ties: smaller
    seg id) and the other becomes a false positive.
    """
    seg, gt = _check_pair(seg, gt)
    s_ids, g_ids, overlap, _, g_area = _overlap_table(seg, gt)
    claims: dict[int, tuple[int, int]] = {}  # gt index -> (overlap, seg index)
    pairing = {}
    for i, sid in enumerate(s_ids):
        if len(g_ids) == 0 or overlap[i].max() == 0:
            pairing[int(sid)] = None
            continue
        j = int(overlap[i].argmax())
        pairing[int(sid)] = int(g_ids[j])
        o = int(overlap[i, j])
        if 2 * o >= g_area[j]:
            best = claims.get(j)
            if best is None or o > best[0]:
                claims[j] = (o, i)
    n_tp = len(claims)
    return MatchStats(n_tp=n_tp, n_fp=len(s_ids) - n_tp, n_fn=len(g_ids) - n_tp, pairing=pairing)


def detection_f1(stats: MatchStats, both_empty: bool | None = None):
    """Return ``(f1, precision, recall)``.

    Empty denominators give 0; when neither mask holds an object the result
    is a perfect (1, 1, 1).  ``both_empty`` defaults to "all counts zero".
    """
    tp, fp, fn = stats.n_tp, stats.n_fp, stats.n_fn
    if both_empty is None:
        both_empty = tp == fp == fn == 0
    if both_empty:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return f1, p, r


def pixel_dice(g: np.ndarray, s: np.ndarray) -> float:
    """2|G n S| / (|G| + |S|) for two boolean masks; 1 when both are empty."""
    g, s = np.asarray(g, dtype=bool), np.asarray(s, dtype=bool)
    total = int(g.sum()) + int(s.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((g & s).sum()) / total


def hausdorff(g: np.ndarray, s: np.ndarray, mode: str = "full") -> float:
    """Symmetric Hausdorff distance between two non-empty pixel sets.

    ``g`` and ``s`` are boolean masks on the same grid; pixels are lattice
    points.  ``mode="boundary"`` restricts both sets to their 4-boundary
    pixels first.  The directed distances come from an exact Euclidean
    distance transform over the joint bounding box, which yields the same
    ``sqrt(dy**2 + dx**2)`` values as a pairwise double loop.
    """
    g, s = np.asarray(g, dtype=bool), np.asarray(s, dtype=bool)
    if g.shape != s.shape:
        raise ShapeError(f"pixel sets live on different grids: {g.shape} vs {s.shape}")
    if not g.any() or not s.any():
        raise ValueError("Hausdorff distance is undefined for an empty pixel set")
    if mode == "boundary":
        g, s = instance_boundary(g.astype(np.int8)), instance_boundary(s.astype(np.int8))
    elif mode != "full":
        raise ValueError(f"unknown Hausdorff mode {mode!r}")
    rows, cols = np.nonzero(g | s)
    box = (slice(rows.min(), rows.max() + 1), slice(cols.min(), cols.max() + 1))
    g, s = g[box], s[box]
    d_to_s = ndimage.distance_transform_edt(~s)
    d_to_g = ndimage.distance_transform_edt(~g)
    return float(max(d_to_s[g].max(), d_to_g[s].max()))


def _object_terms(seg, gt, metric: str, hausdorff_mode: str = "full") -> ObjectTerms:
    seg, gt = _check_pair(seg, gt)
    s_ids, g_ids, overlap, s_area, g_area = _overlap_table(seg, gt)
    diag = math.hypot(*seg.shape)
    cache: dict[tuple[int, int], float] = {}

    def value(i: int, j: int) -> float:
        if (i, j) not in cache:
            gm, sm = gt == g_ids[j], seg == s_ids[i]
            if metric == "dice":
                cache[i, j] = pixel_dice(gm, sm)
            else:
                cache[i, j] = hausdorff(gm, sm, hausdorff_mode)
        return cache[i, j]

    def side(areas, own_n, other_n, ov, get):
        # ov[k, m]: overlap between own object k and counterpart m
        total = 0.0
        for k in range(own_n):
            if other_n == 0:
                v = 0.0 if metric == "dice" else diag
            elif ov[k].max() > 0:
                v = get(k, int(ov[k].argmax()))
            elif metric == "dice":
                v = 0.0
            else:
                v = min(get(k, m) for m in range(other_n))
            total += float(areas[k]) * v
        return total

    seg_sum = side(s_area, len(s_ids), len(g_ids), overlap, value)
    gt_sum = side(g_area, len(g_ids), len(s_ids), overlap.T, lambda k, m: value(m, k))
    return ObjectTerms(seg_sum, int(s_area.sum()), gt_sum, int(g_area.sum()))


def object_dice_terms(seg, gt) -> ObjectTerms:
    return _object_terms(seg, gt, "dice")


def object_hausdorff_terms(seg, gt, mode: str = "full") -> ObjectTerms:
    return _object_terms(seg, gt, "hausdorff", mode)


def combine_dice(t: ObjectTerms) -> float:
    if t.seg_area == 0 and t.gt_area == 0:
        return 1.0
    a = t.seg_sum / t.seg_area if t.seg_area else 0.0
    b = t.gt_sum / t.gt_area if t.gt_area else 0.0
    return 0.5 * (a + b)


def combine_hausdorff(t: ObjectTerms) -> float:
    a = t.seg_sum / t.seg_area if t.seg_area else 0.0
    b = t.gt_sum / t.gt_area if t.gt_area else 0.0
    return 0.5 * (a + b)


def object_dice(seg: np.ndarray, gt: np.ndarray) -> float:
    """Size-weighted, two-sided object-level Dice index.

    Objects without any overlapping counterpart score 0.  Both masks empty
    gives 1; exactly one empty gives 0.
    """
    return combine_dice(object_dice_terms(seg, gt))


def object_hausdorff(seg: np.ndarray, gt: np.ndarray, mode: str = "full") -> float:
    """Size-weighted, two-sided object-level Hausdorff distance.

    An object that overlaps nothing is paired with the counterpart object of
    smallest Hausdorff distance (ties: smaller id).  If the other mask has no
    objects at all, the object contributes the image diagonal
    ``hypot(height, width)``; the empty side's own sum is empty, so a lone
    empty mask scores half the diagonal.  Both empty gives 0.
    """
    return combine_hausdorff(object_hausdorff_terms(seg, gt, mode))


@dataclass
class ImageReport:
    name: str
    f1: float
    precision: float
    recall: float
    object_dice: float
    object_hausdorff: float


def evaluate(pairs, hausdorff_mode: str = "full"):
    """Score ``(name, seg, gt)`` triples.

    Returns per-image reports and an ``ALL`` report that pools detection
    counts and object terms over the whole set.
    """
    rows = []
    tp = fp = fn = 0
    dice_t, haus_t = ObjectTerms(), ObjectTerms()
    any_objects = False
    for name, seg, gt in pairs:
        stats = match_objects(seg, gt)
        f1, p, r = detection_f1(stats)
        dt, ht = object_dice_terms(seg, gt), object_hausdorff_terms(seg, gt, hausdorff_mode)
        rows.append(ImageReport(name, f1, p, r, combine_dice(dt), combine_hausdorff(ht)))
        tp, fp, fn = tp + stats.n_tp, fp + stats.n_fp, fn + stats.n_fn
        any_objects |= bool(stats.n_tp + stats.n_fp + stats.n_fn)
        dice_t, haus_t = dice_t + dt, haus_t + ht
    f1, p, r = detection_f1(MatchStats(tp, fp, fn), both_empty=not any_objects)
    total = ImageReport("ALL", f1, p, r, combine_dice(dice_t), combine_hausdorff(haus_t))
    return rows, total


# --- ranking -----------------------------------------------------------------

CRITERIA = ("f1_a", "f1_b", "dice_a", "dice_b", "haus_a", "haus_b")
HIGHER_IS_BETTER = {"f1_a": True, "f1_b": True, "dice_a": True, "dice_b": True,
                    "haus_a": False, "haus_b": False}


def competition_rank(scores, higher_better: bool = True) -> list[int]:
    """Standard competition ("1224") ranks: 1 + number of strictly better scores."""
    vals = [float(v) for v in scores]
    if higher_better:
        return [1 + sum(o > v for o in vals) for v in vals]
    return [1 + sum(o < v for o in vals) for v in vals]


@dataclass
class RankingRow:
    team: str
    ranks: tuple
    sum_score: int
    final_rank: int


def sum_score(rank_rows: dict) -> list[RankingRow]:
    """Sum the six criterion ranks per team and rank the sums (smaller is better).

    ``rank_rows`` maps team -> sequence of six ranks.  Rows come back ordered
    by final rank, keeping input order among ties.
    """
    teams = list(rank_rows)
    for t in teams:
        r = rank_rows[t]
        if len(r) != len(CRITERIA) or any(v is None for v in r):
            raise ValueError(f"team {t!r} needs {len(CRITERIA)} rank entries, got {list(r)}")
    sums = [int(sum(rank_rows[t])) for t in teams]
    final = competition_rank(sums, higher_better=False)
    rows = [RankingRow(t, tuple(int(v) for v in rank_rows[t]), s, f) for t, s, f in zip(teams, sums, final)]
    return sorted(rows, key=lambda row: row.final_rank)


def rank_teams(table: dict) -> list[RankingRow]:
    """Rank teams from raw scores.

    ``table`` maps team -> dict with the keys in ``CRITERIA``.  F1 and Dice
    rank descending, Hausdorff ascending.
    """
    teams = list(table)
    per_criterion = {}
    for c in CRITERIA:
        try:
            col = [table[t][c] for t in teams]
        except KeyError as exc:
            raise ValueError(f"missing score {exc} for criterion {c}") from None
        per_criterion[c] = competition_rank(col, HIGHER_IS_BETTER[c])
    return sum_score({t: [per_criterion[c][k] for c in CRITERIA] for k, t in enumerate(teams)})
