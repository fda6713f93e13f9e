"""Region-based segmentation metrics computed from sparse contingency tables.

All entropies are in bits. Voxels labeled 0 in either input are excluded.
For a candidate segmentation S and gold standard U, ``over`` is the
false-split term H(S|U) and ``under`` is the false-merge term H(U|S).
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from ._validation import check_label_volume, check_same_shape
from .rag import apply_threshold


@dataclass
class ContingencyTable:
    """Sparse joint counts between two labelings.

    Attributes
    ----------
    table : scipy.sparse.csr_matrix
        ``table[i, j]`` = voxels labeled ``seg_labels[i]`` in the
        segmentation and ``gt_labels[j]`` in the gold standard.
    seg_labels, gt_labels : ndarray of uint64
    """

    table: sparse.csr_matrix
    seg_labels: np.ndarray
    gt_labels: np.ndarray

    @classmethod
    def from_counts(cls, counts):
        """Build from a dense count matrix (rows: segmentation, cols: gold)."""
        counts = np.asarray(counts, dtype=np.int64)
        return cls(sparse.csr_matrix(counts),
                   np.arange(1, counts.shape[0] + 1, dtype=np.uint64),
                   np.arange(1, counts.shape[1] + 1, dtype=np.uint64))

    @property
    def n(self):
        return int(self.table.sum())

    @property
    def seg_sizes(self):
        return np.asarray(self.table.sum(axis=1)).ravel()

    @property
    def gt_sizes(self):
        return np.asarray(self.table.sum(axis=0)).ravel()

    def cells(self):
        """Nonzero cells as ``(row, col, count)`` arrays."""
        coo = self.table.tocoo()
        keep = coo.data > 0
        return coo.row[keep], coo.col[keep], coo.data[keep].astype(np.int64)

    def transpose(self):
        return ContingencyTable(self.table.T.tocsr(), self.gt_labels,
                                self.seg_labels)


def contingency(seg, gt):
    """Contingency table of `seg` against `gt` over voxels nonzero in both."""
    seg = check_label_volume(seg, "seg").ravel()
    gt = check_label_volume(gt, "gt").ravel()
    check_same_shape(seg, gt, ("seg", "gt"))
    keep = (seg != 0) & (gt != 0)
    if not keep.any():
        raise ValueError("no voxel is labeled in both segmentations")
    s_labels, s_idx = np.unique(seg[keep], return_inverse=True)
    g_labels, g_idx = np.unique(gt[keep], return_inverse=True)
    table = sparse.coo_matrix(
        (np.ones(s_idx.size, dtype=np.int64), (s_idx.ravel(), g_idx.ravel())),
        shape=(len(s_labels), len(g_labels))).tocsr()
    table.sum_duplicates()
    return ContingencyTable(table, s_labels, g_labels)


def _as_table(t, gt=None):
    return t if gt is None else contingency(t, gt)


class ViResult(NamedTuple):
    under: float   # H(U|S), false merges
    over: float    # H(S|U), false splits
    total: float


def vi(t, gt=None):
    """Variation of information, split into false-merge and false-split
    terms.

    Accepts a :class:`ContingencyTable`, or a segmentation and a gold
    standard volume.
    """
    t = _as_table(t, gt)
    rows, cols, n_su = t.cells()
    N = n_su.sum()
    p = n_su / N
    # ratios are >= 1, so every term is nonnegative
    over = float(np.sum(p * np.log2(t.gt_sizes[cols] / n_su)))
    under = float(np.sum(p * np.log2(t.seg_sizes[rows] / n_su)))
    return ViResult(under, over, under + over)


def split_vi(t, gt=None):
    """``(H(U|S), H(S|U))``: the coordinates of a split-VI plot point."""
    r = vi(t, gt)
    return r.under, r.over


def _pairs(x):
    return sum(int(v) * (int(v) - 1) // 2 for v in np.asarray(x).ravel())


def _pair_counts(t):
    _, _, n_su = t.cells()
    return (_pairs(n_su), _pairs(t.seg_sizes), _pairs(t.gt_sizes),
            _pairs([t.n]))


def rand_index(t, gt=None):
    """Fraction of voxel pairs on which the two labelings agree."""
    t = _as_table(t, gt)
    cells, rows, cols, total = _pair_counts(t)
    if total == 0:
        return 1.0
    return (total + 2 * cells - rows - cols) / total


def adjusted_rand_index(t, gt=None):
    """Chance-adjusted Rand index (1 when both sides are trivially equal)."""
    t = _as_table(t, gt)
    cells, rows, cols, total = _pair_counts(t)
    if total == 0:
        return 1.0
    expected = rows * cols / total
    maximum = (rows + cols) / 2
    if maximum == expected:
        return 1.0
    return (cells - expected) / (maximum - expected)


def adjusted_rand_error(t, gt=None):
    """1 - adjusted Rand index."""
    return 1.0 - adjusted_rand_index(t, gt)


def covering(t, gt=None):
    """Covering of the gold standard by the segmentation: gold segments
    weighted by size, each scored by its best Jaccard overlap."""
    t = _as_table(t, gt)
    rows, cols, n_su = t.cells()
    jac = n_su / (t.seg_sizes[rows] + t.gt_sizes[cols] - n_su)
    best = np.zeros(len(t.gt_labels))
    np.maximum.at(best, cols, jac)
    return float(np.dot(t.gt_sizes, best) / t.n)


class Breakdown(NamedTuple):
    ids: np.ndarray
    mass: np.ndarray
    entropy: np.ndarray


def vi_breakdown(t, gt=None):
    """Per-segment contributions to each VI term.

    Returns
    -------
    false_splits : Breakdown
        For each gold segment u: P(U=u) and H(S | U=u).
    false_merges : Breakdown
        For each candidate segment s: P(S=s) and H(U | S=s).

    Both are sorted by mass * entropy, largest first (ties by id), and
    ``dot(mass, entropy)`` reproduces ``vi(t).over`` and ``vi(t).under``.
    """
    t = _as_table(t, gt)
    rows, cols, n_su = t.cells()
    N = t.n

    def side(labels, sizes, idx):
        q = n_su / sizes[idx]
        ent = np.zeros(len(labels))
        np.add.at(ent, idx, q * np.log2(1 / q))
        mass = sizes / N
        order = np.lexsort((labels, -(mass * ent)))
        return Breakdown(labels[order], mass[order], ent[order])

    return (side(t.gt_labels, t.gt_sizes, cols),
            side(t.seg_labels, t.seg_sizes, rows))


def evaluate(seg, gt):
    """Dictionary of every scalar metric for one segmentation."""
    t = contingency(seg, gt)
    r = vi(t)
    return {"vi": r.total, "vi_under": r.under, "vi_over": r.over,
            "ri": rand_index(t), "are": adjusted_rand_error(t),
            "covering": covering(t)}


# --- threshold sweeps -----------------------------------------------------

class SweepRow(NamedTuple):
    threshold: float
    under: float
    over: float
    total: float


def split_vi_sweep(superpixels, dendrogram, gt, thresholds):
    """Split VI of the dendrogram cut at each of `thresholds`.

    Contingency rows are fused merge by merge along the dendrogram rather
    than re-tabulated, so the whole sweep costs one pass over the log.
    Thresholds must be ascending.
    """
    thresholds = [float(x) for x in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    sp = check_label_volume(superpixels, "superpixels")
    t = contingency(sp, gt)
    N = t.n
    rows = {int(lab): {} for lab in np.unique(sp).tolist() if lab != 0}
    r_idx, c_idx, n_su = t.cells()
    for r, c, n in zip(r_idx.tolist(), c_idx.tolist(), n_su.tolist()):
        rows[int(t.seg_labels[r])][c] = n

    def f(x):
        return x * np.log2(x) if x > 0 else 0.0

    def row_term(row):
        return f(sum(row.values())) - sum(f(n) for n in row.values())

    terms = {lab: row_term(row) for lab, row in rows.items()}
    under_sum = sum(terms.values())
    cell_sum = sum(f(n) for n in n_su.tolist())
    col_sum = sum(f(n) for n in t.gt_sizes.tolist())

    out = []
    applied = 0
    for thr in thresholds:
        stop = dendrogram.n_applied(thr)
        for s, a, _ in dendrogram.events[applied:stop]:
            if s not in rows or a not in rows:
                raise ValueError(f"dendrogram event ({s}, {a}) references "
                                 f"ids absent from the superpixel map")
            rs, ra = rows[s], rows.pop(a)
            if len(ra) > len(rs):
                rs, ra = ra, rs
            for c, n in ra.items():
                if c in rs:
                    m = rs[c]
                    cell_sum += f(m + n) - f(m) - f(n)
                    rs[c] = m + n
                else:
                    rs[c] = n
            rows[s] = rs
            new = row_term(rs)
            under_sum += new - terms[s] - terms.pop(a)
            terms[s] = new
        applied = max(applied, stop)
        under = max(under_sum / N, 0.0)
        over = max((col_sum - cell_sum) / N, 0.0)
        out.append(SweepRow(thr, under, over, under + over))
    return out


def threshold_sweep(superpixels, dendrogram, gt, thresholds,
                    metrics=("vi", "ri", "are", "covering")):
    """Any scalar metric along a threshold sweep, one row per threshold.

    VI terms come from :func:`split_vi_sweep`; other metrics re-tabulate
    the thresholded segmentation.
    """
    rows = split_vi_sweep(superpixels, dendrogram, gt, thresholds)
    table = {"threshold": np.array([r.threshold for r in rows])}
    if "vi" in metrics:
        table["vi"] = np.array([r.total for r in rows])
        table["vi_under"] = np.array([r.under for r in rows])
        table["vi_over"] = np.array([r.over for r in rows])
    scalar = {"ri": rand_index, "are": adjusted_rand_error,
              "covering": covering}
    wanted = [m for m in metrics if m in scalar]
    if wanted:
        values = {m: [] for m in wanted}
        for thr in thresholds:
            t = contingency(apply_threshold(superpixels, dendrogram, thr), gt)
            for m in wanted:
                values[m].append(scalar[m](t))
        table.update({m: np.array(v) for m, v in values.items()})
    return table


LOWER_IS_BETTER = {"vi": True, "vi_under": True, "vi_over": True,
                   "are": True, "ri": False, "covering": False}


def ods_ois(thresholds, per_image_values, lower_is_better=True):
    """Optimal dataset scale and optimal image scale.

    Parameters
    ----------
    thresholds : array, shape (T,)
        Ascending thresholds shared by every image.
    per_image_values : array, shape (n_images, T)
        Metric value of each image at each threshold.
    lower_is_better : bool

    Returns
    -------
    dict
        ``ods_threshold`` and ``ods`` (best mean over images at a single
        threshold), ``ois`` (mean of per-image optima) and
        ``ois_thresholds``. Ties go to the smaller threshold.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    values = np.atleast_2d(np.asarray(per_image_values, dtype=np.float64))
    if values.shape[1] != len(thresholds):
        raise ValueError("each image needs one value per threshold")
    sign = 1.0 if lower_is_better else -1.0
    mean = values.mean(axis=0)
    j = int(np.argmin(sign * mean))
    best = np.argmin(sign * values, axis=1)
    per_image = values[np.arange(len(values)), best]
    return {"ods_threshold": float(thresholds[j]), "ods": float(mean[j]),
            "ois": float(per_image.mean()),
            "ois_thresholds": thresholds[best]}


__all__ = ["ContingencyTable", "ViResult", "Breakdown", "SweepRow",
           "contingency", "vi", "split_vi", "rand_index",
           "adjusted_rand_index", "adjusted_rand_error", "covering",
           "vi_breakdown", "evaluate", "split_vi_sweep", "threshold_sweep",
           "ods_ois", "LOWER_IS_BETTER"]
