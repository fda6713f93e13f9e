"""Scikit-learn style estimators for agglomerative segmentation.

``X`` is a ``(superpixels, cues)`` pair or a list of such pairs and ``y`` is
the matching gold standard (or list of them). ``predict`` returns
segmentations, ``score`` returns minus the variation of information so that
higher is better, as model-selection tools expect.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_cue_volume, check_label_volume,
                          check_same_shape, check_threshold)
from .evaluate import vi
from .features import default_feature_map
from .learn import prepare_image, train
from .rag import LearnedPolicy, MeanBoundary, RandomPolicy, build_rag


def _is_pair(x):
    return isinstance(x, tuple) and len(x) == 2 and \
        not isinstance(x[0], tuple)


def check_images(X, y=None):
    """Normalize ``X`` (and ``y``) to lists of validated volumes."""
    images = [X] if _is_pair(X) else list(X)
    if not images:
        raise ValueError("no images given")
    out = []
    for img in images:
        if not _is_pair(img):
            raise ValueError("each image must be a (superpixels, cues) pair")
        sp = check_label_volume(img[0], "superpixels")
        out.append((sp, check_cue_volume(img[1], sp.shape)))
    if y is None:
        return out, None
    gts = [y] if _is_pair(X) else list(y)
    if len(gts) != len(out):
        raise ValueError(f"got {len(out)} images but {len(gts)} gold "
                         f"standards")
    gts = [check_label_volume(g, "gt") for g in gts]
    for (sp, _), g in zip(out, gts):
        check_same_shape(sp, g, ("superpixels", "gt"))
    return out, gts


def segment(superpixels, cues, policy, threshold=0.5, feature_map=None,
            connectivity="face"):
    """Agglomerate one image under `policy` up to `threshold`.

    Returns ``(segmentation, dendrogram)``.
    """
    threshold = check_threshold(threshold)
    sp = check_label_volume(superpixels, "superpixels")
    cues = check_cue_volume(cues, sp.shape)
    spatial = feature_map is not None and feature_map.needs_spatial
    bins = feature_map.bins if feature_map is not None else 25
    rag = build_rag(sp, cues, connectivity=connectivity,
                    with_spatial=spatial, bins=bins)
    if feature_map is not None:
        feature_map.check_rag(rag)
    rag.set_policy(policy)
    dend = rag.agglomerate(threshold)
    return rag.segmentation(sp), dend


class _AgglomeratorMixin:
    """Shared predict/score/dendrogram for policy-driven estimators."""

    def _policy(self):
        raise NotImplementedError

    def _feature_map(self):
        return None

    def dendrogram(self, X, threshold=np.inf):
        """Merge log of each image (a list if ``X`` is a list)."""
        images, _ = check_images(X)
        out = [segment(sp, cues, self._policy(), threshold,
                       self._feature_map(), self.connectivity)[1]
               for sp, cues in images]
        return out[0] if _is_pair(X) else out

    def predict(self, X, threshold=None):
        """Segmentation(s) at `threshold` (default: ``self.threshold``)."""
        if threshold is None:
            threshold = self.threshold
        images, _ = check_images(X)
        out = [segment(sp, cues, self._policy(), threshold,
                       self._feature_map(), self.connectivity)[0]
               for sp, cues in images]
        return out[0] if _is_pair(X) else out

    def score(self, X, y):
        """Negative mean variation of information against `y`."""
        images, gts = check_images(X, y)
        segs = self.predict([img for img in images])
        return -float(np.mean([vi(s, g).total for s, g in zip(segs, gts)]))


class Agglomerator(_AgglomeratorMixin, BaseEstimator):
    """Agglomeration driven by a random forest learned from a gold standard.

    Parameters
    ----------
    method : {'gala', 'flat', 'lash'}
        'gala' runs guided agglomerative epochs and accumulates examples,
        'flat' trains on superpixel-level edges only, 'lash' labels
        unguided merges by their Rand-index effect.
    epochs : int
        Agglomerative training epochs.
    init : {'flat', 'mean', 'random'}
        Policy for the first epoch.
    mixed : bool
        Add lash examples to every gala epoch.
    bins, quantiles : int
        Histogram features.
    mid_level : bool or None
        Orientation and convex-hull features; None enables them for 2D.
    connectivity : {'face', 'full'}
    n_trees, max_depth, min_leaf, features_per_split, seed
        Random-forest parameters.
    threshold : float
        Default stopping score for ``predict``.
    n_jobs : int
        Worker processes for per-image training epochs.

    Attributes
    ----------
    classifier_ : RandomForest
    feature_map_ : FeatureMap
    training_set_ : TrainingSet
    """

    def __init__(self, method="gala", epochs=5, init="flat", mixed=False,
                 bins=25, quantiles=9, mid_level=None, connectivity="face",
                 n_trees=100, max_depth=20, min_leaf=1,
                 features_per_split=None, seed=0, threshold=0.5, n_jobs=1):
        self.method = method
        self.epochs = epochs
        self.init = init
        self.mixed = mixed
        self.bins = bins
        self.quantiles = quantiles
        self.mid_level = mid_level
        self.connectivity = connectivity
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.features_per_split = features_per_split
        self.seed = seed
        self.threshold = threshold
        self.n_jobs = n_jobs

    def forest_params(self):
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf,
                "features_per_split": self.features_per_split,
                "seed": self.seed}

    def fit(self, X, y):
        images, gts = check_images(X, y)
        sp0, cues0 = images[0]
        if any(c.shape[0] != cues0.shape[0] for _, c in images):
            raise ValueError("all images need the same number of channels")
        fm = default_feature_map(cues0.shape[0], sp0.ndim, self.bins,
                                 self.quantiles, self.mid_level)
        prepared = [prepare_image(sp, cues, gt, fm, self.connectivity)
                    for (sp, cues), gt in zip(images, gts)]
        self.classifier_, self.training_set_ = train(
            prepared, fm, self.method, self.epochs, self.init, self.mixed,
            self.forest_params(), jobs=self.n_jobs)
        self.feature_map_ = fm
        return self

    @classmethod
    def from_model(cls, model, **params):
        """Wrap an already trained (e.g. loaded) classifier."""
        if getattr(model, "feature_map_", None) is None:
            raise ValueError("model carries no feature map")
        est = cls(**params)
        est.classifier_ = model
        est.feature_map_ = model.feature_map_
        return est

    def _policy(self):
        check_is_fitted(self, "classifier_")
        return LearnedPolicy(self.feature_map_, self.classifier_)

    def _feature_map(self):
        check_is_fitted(self, "feature_map_")
        return self.feature_map_


class MeanAgglomerator(_AgglomeratorMixin, BaseEstimator):
    """Baseline agglomeration by mean boundary value of one cue channel.

    ``fit`` does nothing; it exists so the baseline drops into the same
    pipelines as :class:`Agglomerator`.
    """

    def __init__(self, channel=0, connectivity="face", threshold=0.5):
        self.channel = channel
        self.connectivity = connectivity
        self.threshold = threshold

    def fit(self, X, y=None):
        check_images(X, y)
        self.fitted_ = True
        return self

    def _policy(self):
        return MeanBoundary(self.channel)


class RandomAgglomerator(MeanAgglomerator):
    """Agglomeration in pseudo-random order; a sanity floor for comparisons."""

    def __init__(self, seed=0, connectivity="face", threshold=0.5):
        self.seed = seed
        self.connectivity = connectivity
        self.threshold = threshold

    def _policy(self):
        return RandomPolicy(self.seed)
