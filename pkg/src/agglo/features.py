"""Edge feature maps computed purely from node and edge accumulators.

A :class:`FeatureMap` concatenates the output of independent managers.
Each manager works on batches of ``(node_u, node_v, edge)`` records so a
whole set of edges can be featurized with a handful of array operations.
"""

import numpy as np

from .rag import DEFAULT_BINS, convex_hull, pixel_hull_area

DEFAULT_QUANTILES = 9


def _stack(records, attr):
    return np.stack([getattr(r, attr) for r in records])


def quantiles_from_histogram(hist, probs):
    """Approximate quantiles of normalized histograms over [0, 1].

    Each bin is treated as uniform over its interval and the quantile is
    found by linear interpolation inside the bin where the cumulative mass
    first reaches the probability.

    Parameters
    ----------
    hist : array, shape (..., B)
        Normalized bin masses.
    probs : array, shape (Q,)
        Probabilities in (0, 1).

    Returns
    -------
    array, shape (..., Q)
    """
    hist = np.asarray(hist, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    B = hist.shape[-1]
    if probs.size == 0:
        return np.empty(hist.shape[:-1] + (0,))
    cum = np.cumsum(hist, axis=-1)
    j = np.minimum(np.sum(cum[..., None, :] < probs[:, None], axis=-1), B - 1)
    upper = np.take_along_axis(cum, j, -1)
    mass = np.take_along_axis(hist, j, -1)
    frac = np.divide(probs - (upper - mass), mass, out=np.zeros_like(mass),
                     where=mass > 0)
    return (j + np.clip(frac, 0, 1)) / B


def jensen_shannon(p, q):
    """Jensen-Shannon divergence in bits along the last axis; 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = (p + q) / 2

    def kl(a):
        ratio = np.divide(a, m, out=np.ones_like(a), where=a > 0)
        return np.sum(a * np.log2(ratio), axis=-1)

    return np.clip((kl(p) + kl(q)) / 2, 0.0, 1.0)


class FeatureManager:
    """Base class: a block of features computed from records."""

    name = None
    needs_spatial = False

    def n_features(self, n_channels):
        raise NotImplementedError

    def compute(self, us, vs, es):
        """Feature block for aligned lists of nodes and edges, shape
        (len(es), n_features)."""
        raise NotImplementedError

    def config(self):
        return {"name": self.name}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items()
                         if k != "name")
        return f"{type(self).__name__}({args})"


class MomentsManager(FeatureManager):
    """Per channel and per record (u, v, boundary): log count, mean and
    central moments of order 2-4, then |difference| of the u and v values
    of (mean, mu2, mu3, mu4)."""

    name = "moments"

    def n_features(self, n_channels):
        return 19 * n_channels

    def compute(self, us, vs, es):
        blocks = []
        moments = {}
        for tag, recs in (("u", [n.cue for n in us]),
                          ("v", [n.cue for n in vs]),
                          ("b", [e.boundary for e in es])):
            count = np.array([r.count for r in recs], dtype=np.float64)
            raw = _stack(recs, "moments") / count[:, None, None]
            m1, m2, m3, m4 = np.moveaxis(raw, -1, 0)
            cm = np.stack([m1, m2 - m1 ** 2,
                           m3 - 3 * m1 * m2 + 2 * m1 ** 3,
                           m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4],
                          axis=-1)  # (n, C, 4)
            moments[tag] = cm
            logc = np.broadcast_to(np.log(count)[:, None, None],
                                   cm.shape[:2] + (1,))
            blocks.append(np.concatenate([logc, cm], axis=-1))
        blocks.append(np.abs(moments["u"] - moments["v"]))
        out = np.concatenate(blocks, axis=-1)  # (n, C, 19)
        return out.reshape(len(es), -1)


class HistogramManager(FeatureManager):
    """Per channel: normalized histograms of u, v and the boundary, their
    approximate quantiles, and the Jensen-Shannon divergence between the u
    and v histograms."""

    name = "histogram"

    def __init__(self, bins=DEFAULT_BINS, quantiles=DEFAULT_QUANTILES):
        if bins < 1 or quantiles < 0:
            raise ValueError("need bins >= 1 and quantiles >= 0")
        self.bins = int(bins)
        self.quantiles = int(quantiles)

    @property
    def probabilities(self):
        q = self.quantiles
        return np.arange(1, q + 1) / (q + 1)

    def n_features(self, n_channels):
        return (3 * self.bins + 3 * self.quantiles + 1) * n_channels

    def compute(self, us, vs, es):
        hists = []
        for recs in ([n.cue for n in us], [n.cue for n in vs],
                     [e.boundary for e in es]):
            h = _stack(recs, "hist").astype(np.float64)
            if h.shape[-1] != self.bins:
                raise ValueError(f"graph histograms have {h.shape[-1]} bins, "
                                 f"feature map expects {self.bins}")
            total = h.sum(axis=-1, keepdims=True)
            if np.any(total == 0):
                raise ValueError("empty accumulator")
            hists.append(h / total)
        probs = self.probabilities
        quants = [quantiles_from_histogram(h, probs) for h in hists]
        jsd = jensen_shannon(hists[0], hists[1])[..., None]
        out = np.concatenate(hists + quants + [jsd], axis=-1)
        return out.reshape(len(es), -1)

    def config(self):
        return {"name": self.name, "bins": self.bins,
                "quantiles": self.quantiles}


class GeometryManager(FeatureManager):
    """Size and contact terms: log combined size, size ratio (small over
    large), and boundary count relative to each region's size."""

    name = "geometry"

    def n_features(self, n_channels):
        return 4

    def compute(self, us, vs, es):
        su = np.array([n.size for n in us], dtype=np.float64)
        sv = np.array([n.size for n in vs], dtype=np.float64)
        b = np.array([e.count for e in es], dtype=np.float64)
        small, large = np.minimum(su, sv), np.maximum(su, sv)
        return np.stack([np.log(su + sv), small / large, b / small,
                         b / large], axis=1)


def _principal_axis(cov):
    # cov: (n, 2, 2); returns unit axes (n, 2) and a degeneracy mask
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    gap = np.hypot((a - c) / 2, b)
    degenerate = gap <= 1e-9 * np.maximum(a + c, 1.0)
    theta = 0.5 * np.arctan2(2 * b, a - c)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1), degenerate


def _line_angle(x, y):
    # angle in [0, pi/2] between the lines spanned by unit vectors x and y
    dot = np.abs(np.sum(x * y, axis=-1))
    return np.arccos(np.clip(dot, 0.0, 1.0))


class OrientationManager(FeatureManager):
    """2D region orientation from second moments: angle between the two
    principal axes, angle between each axis and the segment joining the
    centroids, and one isotropy flag per region. Angles involving an
    isotropic region are reported as 0."""

    name = "orientation"
    needs_spatial = True

    def n_features(self, n_channels):
        return 5

    def compute(self, us, vs, es):
        sps = [n.spatial for n in us], [n.spatial for n in vs]
        if any(s is None for group in sps for s in group):
            raise ValueError("orientation features need spatial statistics")
        if sps[0][0].coord_sum.shape[0] != 2:
            raise ValueError("orientation features are only defined in 2D")
        axes, flags, cents = [], [], []
        for group in sps:
            cov = np.stack([s.covariance() for s in group])
            axis, deg = _principal_axis(cov)
            axes.append(axis)
            flags.append(deg)
            cents.append(np.stack([s.centroid() for s in group]))
        d = cents[1] - cents[0]
        dist = np.linalg.norm(d, axis=1)
        has_seg = dist > 1e-12
        seg = d / np.where(has_seg, dist, 1.0)[:, None]
        between = np.where(flags[0] | flags[1], 0.0,
                           _line_angle(axes[0], axes[1]))
        to_seg = [np.where(f | ~has_seg, 0.0, _line_angle(ax, seg))
                  for ax, f in zip(axes, flags)]
        return np.stack([between, to_seg[0], to_seg[1],
                         flags[0].astype(float), flags[1].astype(float)],
                        axis=1)


class HullManager(FeatureManager):
    """2D convexity: hull area over region size for u, v and their union.
    Pixels count as unit squares, so a solid rectangle scores exactly 1."""

    name = "hull"
    needs_spatial = True

    def n_features(self, n_channels):
        return 3

    def compute(self, us, vs, es):
        out = np.empty((len(es), 3))
        for i, (u, v) in enumerate(zip(us, vs)):
            if u.spatial is None or v.spatial is None \
                    or u.spatial.hull is None or v.spatial.hull is None:
                raise ValueError("hull features need 2D convex hulls")
            union = convex_hull(np.concatenate([u.spatial.hull,
                                                v.spatial.hull]))
            out[i] = (u.spatial.hull_area() / u.size,
                      v.spatial.hull_area() / v.size,
                      pixel_hull_area(union) / (u.size + v.size))
        return out


MANAGERS = {cls.name: cls for cls in (MomentsManager, HistogramManager,
                                      GeometryManager, OrientationManager,
                                      HullManager)}


class FeatureMap:
    """Ordered composition of feature managers for a fixed channel count.

    Parameters
    ----------
    managers : list of FeatureManager
    n_channels : int
        Number of cue channels the graphs will carry.
    """

    def __init__(self, managers, n_channels):
        if not managers:
            raise ValueError("a feature map needs at least one manager")
        self.managers = list(managers)
        self.n_channels = int(n_channels)
        self.n_features = sum(m.n_features(self.n_channels)
                              for m in self.managers)

    @property
    def needs_spatial(self):
        return any(m.needs_spatial for m in self.managers)

    @property
    def bins(self):
        for m in self.managers:
            if isinstance(m, HistogramManager):
                return m.bins
        return DEFAULT_BINS

    def check_rag(self, rag):
        if rag.n_channels != self.n_channels:
            raise ValueError(f"graph has {rag.n_channels} cue channels, "
                             f"feature map expects {self.n_channels}")
        if self.needs_spatial and not rag.has_spatial:
            raise ValueError("feature map needs a graph built with "
                             "spatial statistics")

    def compute(self, rag, u, v):
        """Feature vector of edge (u, v); endpoint order does not matter."""
        return self.compute_many(rag, [(u, v)])[0]

    def compute_many(self, rag, pairs):
        """Feature matrix of shape (len(pairs), n_features)."""
        pairs = [(u, v) if u < v else (v, u) for u, v in pairs]
        if not pairs:
            return np.empty((0, self.n_features))
        us = [rag.nodes[u] for u, _ in pairs]
        vs = [rag.nodes[v] for _, v in pairs]
        es = [rag.edge(u, v) for u, v in pairs]
        if us[0].cue.n_channels != self.n_channels:
            raise ValueError(f"graph has {us[0].cue.n_channels} cue channels, "
                             f"feature map expects {self.n_channels}")
        out = np.concatenate([m.compute(us, vs, es) for m in self.managers],
                             axis=1)
        return out

    def config(self):
        return {"n_channels": self.n_channels,
                "managers": [m.config() for m in self.managers]}

    @classmethod
    def from_config(cls, config):
        managers = []
        for cfg in config["managers"]:
            cfg = dict(cfg)
            name = cfg.pop("name")
            if name not in MANAGERS:
                raise ValueError(f"unknown feature manager {name!r}")
            managers.append(MANAGERS[name](**cfg))
        return cls(managers, config["n_channels"])

    def __eq__(self, other):
        return isinstance(other, FeatureMap) and \
            self.config() == other.config()

    def __repr__(self):
        return f"FeatureMap({self.managers!r}, n_channels={self.n_channels})"


def default_feature_map(n_channels, ndim, bins=DEFAULT_BINS,
                        quantiles=DEFAULT_QUANTILES, mid_level=None):
    """Moments, histograms and geometry; orientation and hull features are
    added for 2D data unless `mid_level` says otherwise."""
    managers = [MomentsManager(), HistogramManager(bins, quantiles),
                GeometryManager()]
    if mid_level is None:
        mid_level = ndim == 2
    if mid_level:
        if ndim != 2:
            raise ValueError("orientation and hull features require 2D data")
        managers += [OrientationManager(), HullManager()]
    return FeatureMap(managers, n_channels)
