"""Region adjacency graph with mergeable statistics and greedy agglomeration.

Every node and edge carries additive accumulators, so merging two regions
never touches voxel data again. Edge scores live in a binary heap with lazy
deletion: each edge has a version stamp, and heap entries whose stamp no
longer matches are skipped when popped.
"""

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ._random import hash_ints
from ._validation import (check_cue_volume, check_label_volume,
                          check_threshold)
from .volume import adjacent_pairs

DEFAULT_BINS = 25


# --- accumulators ---------------------------------------------------------

def histogram_bins(values, bins):
    """Bin index of each value for `bins` uniform bins over [0, 1]."""
    return np.minimum((np.asarray(values) * bins).astype(np.int64), bins - 1)


class CueStats:
    """Per-channel count, raw moment sums (orders 1-4) and histogram.

    Attributes
    ----------
    count : int
        Number of samples (shared by every channel).
    moments : ndarray, shape (channels, 4)
        Sums of x, x**2, x**3 and x**4.
    hist : ndarray of int64, shape (channels, bins)
    """

    __slots__ = ("count", "moments", "hist")

    def __init__(self, count, moments, hist):
        self.count = int(count)
        self.moments = moments
        self.hist = hist

    @classmethod
    def from_samples(cls, samples, bins=DEFAULT_BINS):
        """Accumulate `samples` of shape (channels, n)."""
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        powers = samples[..., np.newaxis] ** np.arange(1, 5)
        hist = np.stack([np.bincount(histogram_bins(ch, bins), minlength=bins)
                         for ch in samples]).astype(np.int64)
        return cls(samples.shape[1], powers.sum(axis=1), hist)

    def __add__(self, other):
        return CueStats(self.count + other.count, self.moments + other.moments,
                        self.hist + other.hist)

    @property
    def n_channels(self):
        return self.moments.shape[0]

    def mean(self):
        return self.moments[:, 0] / self.count

    def central_moments(self):
        """Mean and central moments of order 2-4, shape (channels, 4)."""
        m1, m2, m3, m4 = (self.moments / self.count).T
        mu2 = m2 - m1 ** 2
        mu3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
        mu4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
        return np.stack([m1, mu2, mu3, mu4], axis=1)


def convex_hull(points):
    """Vertices of the 2D convex hull of integer `points`, counterclockwise.

    Collinear points are dropped, so the result is a canonical vertex set.
    A single point or a segment yields 1 or 2 vertices.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.int64).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.int64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def polygon_area(vertices):
    """Shoelace area of a simple polygon given in order."""
    v = np.asarray(vertices, dtype=np.float64).tolist()
    if len(v) < 3:
        return 0.0
    twice = 0.0
    for (x0, y0), (x1, y1) in zip(v, v[1:] + v[:1]):
        twice += x0 * y1 - x1 * y0
    return abs(twice) / 2


def pixel_hull_area(vertices):
    """Area of the convex hull of unit squares centred on the given pixel
    centres (which must already form a convex hull).

    The hull of the squares is the Minkowski sum of the centre hull with a
    unit square, whose area is the centre hull's area plus its x and y
    extents plus one.
    """
    v = np.asarray(vertices, dtype=np.int64).reshape(-1, 2)
    extent = v.max(axis=0) - v.min(axis=0)
    return polygon_area(v) + float(extent.sum()) + 1.0


class SpatialStats:
    """Coordinate moments of a region, plus its convex hull in 2D."""

    __slots__ = ("count", "coord_sum", "coord_sq", "hull", "_area")

    def __init__(self, count, coord_sum, coord_sq, hull=None):
        self.count = int(count)
        self.coord_sum = coord_sum
        self.coord_sq = coord_sq
        self.hull = hull
        self._area = None

    @classmethod
    def from_coords(cls, coords):
        """Accumulate integer coordinates of shape (n, ndim)."""
        coords = np.asarray(coords, dtype=np.int64)
        c = coords.astype(np.float64)
        hull = convex_hull(coords) if coords.shape[1] == 2 else None
        return cls(len(c), c.sum(axis=0), c.T @ c, hull)

    def __add__(self, other):
        hull = None
        if self.hull is not None and other.hull is not None:
            hull = convex_hull(np.concatenate([self.hull, other.hull]))
        return SpatialStats(self.count + other.count,
                            self.coord_sum + other.coord_sum,
                            self.coord_sq + other.coord_sq, hull)

    def centroid(self):
        return self.coord_sum / self.count

    def covariance(self):
        mu = self.centroid()
        return self.coord_sq / self.count - np.outer(mu, mu)

    def hull_area(self):
        if self.hull is None:
            raise ValueError("convex hulls are only tracked for 2D regions")
        if self._area is None:
            self._area = pixel_hull_area(self.hull)
        return self._area


class Node:
    """A region: a set of superpixels and its accumulated statistics."""

    __slots__ = ("id", "members", "cue", "spatial")

    def __init__(self, id, members, cue, spatial=None):
        self.id = id
        self.members = members
        self.cue = cue
        self.spatial = spatial

    @property
    def size(self):
        return self.cue.count

    def __add__(self, other):
        spatial = None
        if self.spatial is not None and other.spatial is not None:
            spatial = self.spatial + other.spatial
        return Node(min(self.id, other.id), self.members | other.members,
                    self.cue + other.cue, spatial)

    def __repr__(self):
        return f"Node(id={self.id}, size={self.size})"


class Edge:
    """Boundary between two regions; `boundary.count` is the number of
    adjacent voxel pairs straddling it."""

    __slots__ = ("u", "v", "boundary")

    def __init__(self, u, v, boundary):
        self.u, self.v = (u, v) if u < v else (v, u)
        self.boundary = boundary

    @property
    def count(self):
        return self.boundary.count

    def __repr__(self):
        return f"Edge({self.u}, {self.v}, count={self.count})"


def _key(u, v):
    return (u, v) if u < v else (v, u)


# --- policies ---------------------------------------------------------------

class Policy:
    """Merge priority function. Lower scores merge sooner.

    Subclasses implement ``score_edges(rag, pairs)`` returning one score per
    (u, v) pair, computed only from the two nodes and their shared edge.
    """

    def score_edges(self, rag, pairs):
        raise NotImplementedError

    def __call__(self, rag, u, v):
        return float(self.score_edges(rag, [_key(u, v)])[0])


class MeanBoundary(Policy):
    """Mean boundary value of one cue channel along the edge."""

    def __init__(self, channel=0):
        self.channel = channel

    def score_edges(self, rag, pairs):
        c = self.channel
        return np.array([e.boundary.moments[c, 0] / e.boundary.count
                         for e in map(rag.edge, *zip(*pairs))]
                        if pairs else [], dtype=np.float64)

    def __repr__(self):
        return f"MeanBoundary(channel={self.channel})"


class RandomPolicy(Policy):
    """Uniform pseudo-random scores keyed on (seed, u, v, edge version).

    The score of an edge changes exactly when one of its endpoints does.
    """

    def __init__(self, seed=0):
        self.seed = seed

    def score_edges(self, rag, pairs):
        return np.array([(hash_ints(self.seed, u, v, rag.version(u, v)) >> 11)
                         * 2.0 ** -53 for u, v in pairs], dtype=np.float64)

    def __repr__(self):
        return f"RandomPolicy(seed={self.seed})"


class LearnedPolicy(Policy):
    """Classifier probability of "don't merge" applied to edge features."""

    def __init__(self, feature_map, classifier, remember=False):
        self.feature_map = feature_map
        self.classifier = classifier
        self.remember = remember
        self.memory = {}

    def score_edges(self, rag, pairs):
        if not pairs:
            return np.empty(0)
        X = self.feature_map.compute_many(rag, pairs)
        if self.remember:
            # the latest scoring of an edge always reflects its live version
            for (u, v), x in zip(pairs, X):
                self.memory[_key(u, v)] = x
        return self.classifier.predict_proba(X)[:, 1]

    def features(self, rag, u, v):
        """Feature vector of a live edge, reusing the one it was scored
        with when available."""
        x = self.memory.get(_key(u, v))
        return x if x is not None else self.feature_map.compute(rag, u, v)


# --- the graph --------------------------------------------------------------

class Rag:
    """Region adjacency graph over a superpixel map.

    Use :func:`build_rag` to construct one. Node ids are superpixel labels;
    merging keeps the smaller id.
    """

    def __init__(self, nodes, edges, superpixels, ndim, bins, connectivity):
        self.nodes = nodes
        self.edges = edges
        self.adjacency = {n: set() for n in nodes}
        for u, v in edges:
            self.adjacency[u].add(v)
            self.adjacency[v].add(u)
        self.superpixels = superpixels
        self.ndim = ndim
        self.bins = bins
        self.connectivity = connectivity
        self.policy = None
        self.heap = []
        self.merge_log = []
        self._versions = dict.fromkeys(edges, 0)
        self._clock = 0

    @property
    def n_channels(self):
        return next(iter(self.nodes.values())).cue.n_channels

    @property
    def has_spatial(self):
        return next(iter(self.nodes.values())).spatial is not None

    def __len__(self):
        return len(self.nodes)

    def edge(self, u, v):
        try:
            return self.edges[_key(u, v)]
        except KeyError:
            raise KeyError(f"no edge between {u} and {v}") from None

    def has_edge(self, u, v):
        return _key(u, v) in self.edges

    def neighbors(self, u):
        return self.adjacency[u]

    def version(self, u, v):
        return self._versions[_key(u, v)]

    def copy(self):
        """Independent copy. Node and edge records are immutable and shared."""
        new = Rag.__new__(Rag)
        new.nodes = dict(self.nodes)
        new.edges = dict(self.edges)
        new.adjacency = {n: set(a) for n, a in self.adjacency.items()}
        new.superpixels = self.superpixels
        new.ndim, new.bins = self.ndim, self.bins
        new.connectivity = self.connectivity
        new.policy = self.policy
        new.heap = list(self.heap)
        new.merge_log = list(self.merge_log)
        new._versions = dict(self._versions)
        new._clock = self._clock
        return new

    # scoring

    def set_policy(self, policy):
        """Score every edge under `policy` and rebuild the heap."""
        self.policy = policy
        pairs = sorted(self.edges)
        scores = policy.score_edges(self, pairs) if pairs else []
        self.heap = [(float(s), u, v, self._versions[(u, v)])
                     for s, (u, v) in zip(scores, pairs)]
        heapq.heapify(self.heap)

    def _push(self, pairs):
        if self.policy is None or not pairs:
            return
        scores = self.policy.score_edges(self, pairs)
        for s, (u, v) in zip(scores, pairs):
            heapq.heappush(self.heap, (float(s), u, v, self._versions[(u, v)]))

    def is_live(self, entry):
        _, u, v, version = entry
        return self._versions.get((u, v)) == version

    def pop(self):
        """Remove and return the live minimum ``(score, u, v)``, or None."""
        while self.heap:
            entry = heapq.heappop(self.heap)
            if self.is_live(entry):
                return entry[:3]
        return None

    def peek(self):
        """Return the live minimum without removing it, discarding stale
        entries on the way."""
        while self.heap:
            if self.is_live(self.heap[0]):
                return self.heap[0][:3]
            heapq.heappop(self.heap)
        return None

    def live_entries(self):
        return [e for e in self.heap if self.is_live(e)]

    # mutation

    def merge(self, u, v, score=None):
        """Merge nodes `u` and `v`; return the survivor id (the smaller).

        Edges to common neighbors are fused, every edge incident on the
        survivor gets a new version, and those edges are rescored under the
        current policy.
        """
        key = _key(u, v)
        if key not in self.edges:
            raise ValueError(f"cannot merge {u} and {v}: no shared edge")
        if score is None:
            score = (self.policy(self, *key) if self.policy is not None
                     else math.nan)
        s, a = key
        self.nodes[s] = self.nodes[s] + self.nodes.pop(a)
        del self.edges[key]
        del self._versions[key]
        adj_s, adj_a = self.adjacency[s], self.adjacency.pop(a)
        adj_s.discard(a)
        for w in adj_a:
            if w == s:
                continue
            old = _key(a, w)
            e_aw = self.edges.pop(old)
            del self._versions[old]
            adj_w = self.adjacency[w]
            adj_w.discard(a)
            new = _key(s, w)
            if w in adj_s:
                self.edges[new] = Edge(*new, self.edges[new].boundary
                                       + e_aw.boundary)
            else:
                self.edges[new] = Edge(*new, e_aw.boundary)
                adj_s.add(w)
                adj_w.add(s)
        incident = sorted(_key(s, w) for w in adj_s)
        for k in incident:
            self._clock += 1
            self._versions[k] = self._clock
        self._push(incident)
        self.merge_log.append((s, a, float(score)))
        return s

    def agglomerate(self, threshold=np.inf):
        """Greedily merge the lowest-scoring edge until the best live score
        reaches `threshold` or no edges remain.

        Ties are broken by (score, u, v). Returns the dendrogram of every
        merge performed on this graph so far.
        """
        threshold = check_threshold(threshold)
        if self.policy is None:
            raise ValueError("set a policy before agglomerating")
        while True:
            top = self.peek()
            if top is None or top[0] >= threshold:
                break
            heapq.heappop(self.heap)
            score, u, v = top
            self.merge(u, v, score=score)
        return self.dendrogram()

    def dendrogram(self):
        return Dendrogram(list(self.merge_log), self.superpixels)

    def assignment(self):
        """Map each superpixel id to the id of the node containing it."""
        return {sp: n.id for n in self.nodes.values() for sp in n.members}

    def segmentation(self, superpixels):
        """Relabel a superpixel volume by current node membership."""
        return relabel(superpixels, self.assignment())


def relabel(labels, mapping):
    """Apply a ``{old: new}`` mapping to a label volume; 0 stays 0 and ids
    absent from the mapping are an error."""
    labels = check_label_volume(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    out = np.empty(len(uniq), dtype=np.uint64)
    for i, lab in enumerate(uniq.tolist()):
        if lab == 0:
            out[i] = 0
        elif lab in mapping:
            out[i] = mapping[lab]
        else:
            raise ValueError(f"label {lab} missing from mapping")
    return out[inv.reshape(labels.shape)]


def build_rag(superpixels, cues, connectivity="face", with_spatial=False,
              bins=DEFAULT_BINS):
    """Build a region adjacency graph.

    Parameters
    ----------
    superpixels : array of int
        Superpixel map; 0 voxels belong to no region.
    cues : array of float
        Cue volume ``(channels, *superpixels.shape)`` with values in [0, 1].
    connectivity : {'face', 'full'}
        Voxel adjacency used for edges.
    with_spatial : bool
        Also accumulate coordinate moments (and hulls for 2D inputs).
    bins : int
        Histogram bins per cue accumulator.

    Returns
    -------
    Rag
        Node ids equal superpixel labels. Each adjacent voxel pair with
        distinct nonzero labels adds one boundary sample per channel, the
        mean of the two voxels' cue values.
    """
    sp = check_label_volume(superpixels, "superpixels")
    cues = check_cue_volume(cues, sp.shape)
    flat = sp.ravel()
    values = cues.reshape(cues.shape[0], -1)
    uniq, inv = np.unique(flat, return_inverse=True)
    inv = inv.ravel()
    if uniq[0] == 0:
        uniq, inv = uniq[1:], inv - 1  # inv == -1 marks ignore voxels
    L = len(uniq)
    if L < 2:
        raise ValueError("need at least 2 regions to build a graph")
    ids = uniq.tolist()
    fg = inv >= 0
    lab = inv[fg]
    vals = values[:, fg]

    counts = np.bincount(lab, minlength=L)
    moments = np.stack([np.stack([np.bincount(lab, weights=ch ** p,
                                              minlength=L)
                                  for p in range(1, 5)], axis=1)
                        for ch in vals], axis=1)  # (L, C, 4)
    hist = np.stack([np.bincount(lab * bins + histogram_bins(ch, bins),
                                 minlength=L * bins).reshape(L, bins)
                     for ch in vals], axis=1)

    spatial = [None] * L
    if with_spatial:
        coords = np.indices(sp.shape).reshape(sp.ndim, -1).T[fg]
        order = np.argsort(lab, kind="stable")
        groups = np.split(coords[order], np.cumsum(counts)[:-1])
        spatial = [SpatialStats.from_coords(g) for g in groups]

    nodes = {}
    for i, n in enumerate(ids):
        nodes[n] = Node(n, frozenset((n,)),
                        CueStats(counts[i], moments[i], hist[i]), spatial[i])

    a, b = adjacent_pairs(sp.shape, connectivity)
    la, lb = inv[a], inv[b]
    keep = (la >= 0) & (lb >= 0) & (la != lb)
    a, b, la, lb = a[keep], b[keep], la[keep], lb[keep]
    lo, hi = np.minimum(la, lb), np.maximum(la, lb)
    ekeys, einv = np.unique(lo * L + hi, return_inverse=True)
    E = len(ekeys)
    samples = (values[:, a] + values[:, b]) / 2
    ecounts = np.bincount(einv, minlength=E)
    emoments = np.stack([np.stack([np.bincount(einv, weights=ch ** p,
                                               minlength=E)
                                   for p in range(1, 5)], axis=1)
                         for ch in samples], axis=1)
    ehist = np.stack([np.bincount(einv * bins + histogram_bins(ch, bins),
                                  minlength=E * bins).reshape(E, bins)
                      for ch in samples], axis=1)
    edges = {}
    for j, k in enumerate(ekeys.tolist()):
        u, v = ids[k // L], ids[k % L]
        edges[(u, v)] = Edge(u, v, CueStats(ecounts[j], emoments[j], ehist[j]))
    return Rag(nodes, edges, np.array(ids, dtype=np.uint64), sp.ndim, bins,
               connectivity)


def merge_nodes(rag, u, v, policy=None):
    """Merge `u` and `v` in `rag`, optionally switching to `policy` first."""
    if policy is not None and policy is not rag.policy:
        rag.set_policy(policy)
    return rag.merge(u, v)


def agglomerate(rag, policy, threshold=np.inf):
    """Score `rag` under `policy` and agglomerate up to `threshold`."""
    rag.set_policy(policy)
    return rag.agglomerate(threshold)


# --- dendrograms ------------------------------------------------------------

@dataclass
class Dendrogram:
    """Ordered merge log: ``events[i] = (survivor, absorbed, score)``.

    Scores need not be monotone. `superpixels` lists the initial node ids.
    """

    events: list = field(default_factory=list)
    superpixels: np.ndarray = None

    def __len__(self):
        return len(self.events)

    @property
    def scores(self):
        return np.array([e[2] for e in self.events], dtype=np.float64)

    def n_applied(self, threshold):
        """Length of the prefix of events with score < threshold."""
        for i, (_, _, score) in enumerate(self.events):
            if not score < threshold:
                return i
        return len(self.events)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["order", "survivor", "absorbed", "score"])
            for i, (s, a, score) in enumerate(self.events):
                writer.writerow([i, s, a, format(score, ".17g")])

    @classmethod
    def from_csv(cls, path):
        events = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["order", "survivor", "absorbed", "score"]:
                raise ValueError(f"{path}: not a dendrogram CSV")
            for row in reader:
                events.append((int(row["survivor"]), int(row["absorbed"]),
                               float(row["score"])))
        return cls(events)


def apply_threshold(superpixels, dendrogram, threshold):
    """Segmentation obtained by replaying merges while their score is below
    `threshold`, stopping at the first event that is not.

    Regions are labeled with survivor ids.
    """
    sp = check_label_volume(superpixels, "superpixels")
    threshold = check_threshold(threshold)
    ids = np.unique(sp)
    ids = ids[ids != 0].tolist()
    parent = {i: i for i in ids}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for s, a, _ in dendrogram.events[:dendrogram.n_applied(threshold)]:
        if s not in parent or a not in parent:
            raise ValueError(f"dendrogram event ({s}, {a}) references ids "
                             f"absent from the superpixel map")
        rs, ra = find(s), find(a)
        if ra != a or rs != s:
            raise ValueError(f"dendrogram event ({s}, {a}) is inconsistent "
                             f"with earlier merges")
        parent[a] = s
    return relabel(sp, {i: find(i) for i in ids})
