"""Random-forest merge classifier and training-set containers.

Trees are induced with scikit-learn's CART implementation (Gini impurity,
bootstrap resampling, midpoint thresholds) and then copied into flat
arrays. Prediction, serialization and reloading use only those arrays, so a
saved model predicts bit-identically without scikit-learn's pickles.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import FeatureMap

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable, incompatible or mismatched model files."""


@dataclass
class Tree:
    """Flat binary tree. Leaves have ``feature == -1`` and point to
    themselves; ``value`` holds the fraction of +1 labels at each node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value):
        return cls(np.array([-1]), np.array([0.0]), np.array([0]),
                   np.array([0]), np.array([float(value)]))

    def to_dict(self):
        return {"feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        tree = cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=np.float64))
        n = len(tree.feature)
        if not (n and len(tree.threshold) == len(tree.left)
                == len(tree.right) == len(tree.value) == n):
            raise ModelFormatError("tree arrays have inconsistent lengths")
        return tree


def _from_sklearn(tree, positive):
    t = tree.tree_
    leaf = t.children_left < 0
    nodes = np.arange(t.node_count)
    counts = t.value[:, 0, :]
    value = counts[:, positive] / counts.sum(axis=1)
    return Tree(np.where(leaf, -1, t.feature).astype(np.int64),
                np.where(leaf, 0.0, t.threshold).astype(np.float64),
                np.where(leaf, nodes, t.children_left).astype(np.int64),
                np.where(leaf, nodes, t.children_right).astype(np.int64),
                value.astype(np.float64))


class RandomForest(ClassifierMixin, BaseEstimator):
    """Binary random forest over labels {-1, +1}.

    ``predict_proba(X)[:, 1]`` is the mean over trees of the +1 fraction in
    the reached leaf. In agglomeration +1 means "don't merge", so it is used
    directly as the merge score.

    Parameters
    ----------
    n_trees : int
    max_depth : int
    min_leaf : int
        Minimum number of samples in a leaf.
    features_per_split : int or None
        Candidate features drawn at each split; None means ceil(sqrt(q)).
    seed : int
    """

    def __init__(self, n_trees=100, max_depth=20, min_leaf=1,
                 features_per_split=None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.features_per_split = features_per_split
        self.seed = seed

    def _resolved_params(self, q):
        mtry = self.features_per_split
        if mtry is None:
            mtry = math.ceil(math.sqrt(q))
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("need n_trees >= 1, max_depth >= 1, "
                             "min_leaf >= 1")
        if not 1 <= mtry <= q:
            raise ValueError(f"features_per_split must lie in [1, {q}], "
                             f"got {mtry}")
        return {"n_trees": int(self.n_trees), "max_depth": int(self.max_depth),
                "min_leaf": int(self.min_leaf),
                "features_per_split": int(mtry), "seed": int(self.seed)}

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        labels = set(np.unique(y).tolist())
        if not labels <= {-1, 1}:
            raise ValueError(f"labels must be -1 or +1, got {sorted(labels)}")
        if len(labels) < 2:
            raise ValueError("single-class training set: need both -1 and +1 "
                             "examples")
        params = self._resolved_params(X.shape[1])
        forest = RandomForestClassifier(
            n_estimators=params["n_trees"], criterion="gini",
            max_depth=params["max_depth"],
            min_samples_leaf=params["min_leaf"],
            max_features=params["features_per_split"], bootstrap=True,
            random_state=params["seed"], n_jobs=1)
        forest.fit(X, y)
        positive = int(np.flatnonzero(forest.classes_ == 1)[0])
        self._set_trees([_from_sklearn(t, positive)
                         for t in forest.estimators_], X.shape[1], params)
        return self

    def _set_trees(self, trees, n_features, params):
        self.trees_ = list(trees)
        self.n_features_in_ = int(n_features)
        self.classes_ = np.array([-1, 1])
        self.params_ = params
        for t in self.trees_:
            if t.feature.max() >= n_features:
                raise ModelFormatError("tree references a feature index "
                                       "beyond the feature count")
            if t.value.min() < 0 or t.value.max() > 1:
                raise ModelFormatError("leaf fractions must lie in [0, 1]")
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees_])
        self._roots = offsets[:-1]
        self._feature = np.concatenate([t.feature for t in self.trees_])
        self._threshold = np.concatenate([t.threshold for t in self.trees_])
        self._left = np.concatenate([t.left + o for t, o in
                                     zip(self.trees_, offsets)])
        self._right = np.concatenate([t.right + o for t, o in
                                      zip(self.trees_, offsets)])
        self._value = np.concatenate([t.value for t in self.trees_])

    @classmethod
    def from_trees(cls, trees, n_features, **params):
        """Assemble a fitted forest from explicit trees."""
        model = cls(n_trees=len(trees), **params)
        resolved = model._resolved_params(n_features)
        resolved["n_trees"] = len(trees)
        model._set_trees(trees, n_features, resolved)
        return model

    def positive_proba(self, X):
        """Probability of label +1 for each row of `X`."""
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, "
                             f"got {X.shape[1]}")
        # trees were induced on float32-rounded inputs
        X = X.astype(np.float32).astype(np.float64)
        n = X.shape[0]
        node = np.broadcast_to(self._roots, (n, len(self._roots))).copy()
        rows = np.arange(n)[:, None]
        while True:
            feat = self._feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, feat, 0)] <= self._threshold[node]
            step = np.where(go_left, self._left[node], self._right[node])
            node = np.where(inner, step, node)
        return self._value[node].mean(axis=1)

    def predict_proba(self, X):
        p = self.positive_proba(X)
        return np.stack([1 - p, p], axis=1)

    def predict(self, X):
        return np.where(self.positive_proba(X) > 0.5, 1, -1)

    def to_dict(self, feature_map=None):
        check_is_fitted(self, "trees_")
        return {"format_version": FORMAT_VERSION,
                "params": dict(self.params_),
                "n_features": self.n_features_in_,
                "feature_map_config": (None if feature_map is None
                                       else feature_map.config()),
                "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version "
                                   f"{d.get('format_version')!r}")
        try:
            params = d["params"]
            trees = [Tree.from_dict(t) for t in d["trees"]]
            model = cls(**{k: params[k] for k in ("n_trees", "max_depth",
                                                  "min_leaf",
                                                  "features_per_split",
                                                  "seed")})
            model._set_trees(trees, int(d["n_features"]), dict(params))
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed model: {exc}") from exc
        return model


# --- JSON with 17 significant digits --------------------------------------

def _dump(obj):
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("cannot serialize non-finite reals")
        text = format(float(obj), ".17g")
        if not any(c in text for c in ".en"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dump(v)}"
                               for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj):
    """JSON text with every real printed to 17 significant digits."""
    return _dump(obj) + "\n"


def save_model(model, path, feature_map=None):
    """Write `model` (and the feature map it expects) as JSON."""
    if feature_map is None:
        feature_map = getattr(model, "feature_map_", None)
    if feature_map is not None and \
            feature_map.n_features != model.n_features_in_:
        raise ModelFormatError(f"feature map produces "
                               f"{feature_map.n_features} features, model "
                               f"expects {model.n_features_in_}")
    Path(path).write_text(dumps_json(model.to_dict(feature_map)))


def load_model(path, feature_map=None):
    """Load a model saved by :func:`save_model`.

    The embedded feature map is rebuilt and attached as ``feature_map_``.
    If `feature_map` is given it must match the model's feature count.
    """
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ModelFormatError(f"{path}: malformed model")
    model = RandomForest.from_dict(d)
    embedded = None
    if d.get("feature_map_config") is not None:
        embedded = FeatureMap.from_config(d["feature_map_config"])
        if embedded.n_features != model.n_features_in_:
            raise ModelFormatError(f"{path}: embedded feature map produces "
                                   f"{embedded.n_features} features, model "
                                   f"expects {model.n_features_in_}")
    if feature_map is not None:
        if feature_map.n_features != model.n_features_in_:
            raise ModelFormatError(f"feature map produces "
                                   f"{feature_map.n_features} features, "
                                   f"model expects {model.n_features_in_}")
        if embedded is not None and embedded != feature_map:
            raise ModelFormatError("feature map differs from the one the "
                                   "model was trained with")
    model.feature_map_ = embedded if embedded is not None else feature_map
    return model


# --- training sets ----------------------------------------------------------

@dataclass
class TrainingSet:
    """Feature vectors with labels in {-1, +1} and a provenance tag per
    example (e.g. ``flat``, ``gala-1``, ``lash-2``)."""

    X: np.ndarray
    y: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2D with one row per label")
        if len(self.y) and not np.all(np.isin(self.y, (-1, 1))):
            raise ValueError("training labels must be -1 or +1")
        if len(self.tags) != len(self.y):
            raise ValueError("need exactly one provenance tag per example")

    @classmethod
    def empty(cls, n_features):
        return cls(np.empty((0, n_features)), np.empty(0, dtype=np.int64), [])

    @classmethod
    def from_examples(cls, examples, n_features, tag):
        """Build from a list of ``(features, label)`` pairs."""
        if not examples:
            return cls.empty(n_features)
        X = np.stack([x for x, _ in examples])
        y = np.array([lab for _, lab in examples], dtype=np.int64)
        return cls(X, y, [tag] * len(y))

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self):
        return self.X.shape[1]

    def __add__(self, other):
        if len(self) and len(other) and self.n_features != other.n_features:
            raise ValueError("cannot join training sets of different widths")
        if not len(self):
            return TrainingSet(other.X.copy(), other.y.copy(),
                               list(other.tags))
        if not len(other):
            return TrainingSet(self.X.copy(), self.y.copy(), list(self.tags))
        return TrainingSet(np.vstack([self.X, other.X]),
                           np.concatenate([self.y, other.y]),
                           self.tags + other.tags)

    def to_csv(self, path, feature_map=None, extra=None):
        """Write ``label,f0,f1,...`` rows plus a provenance sidecar JSON
        next to `path` (same name, ``.json`` suffix)."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label"] + [f"f{i}"
                                         for i in range(self.n_features)])
            for x, lab in zip(self.X, self.y):
                writer.writerow([int(lab)] + [format(v, ".17g") for v in x])
        sidecar = {"n_examples": len(self), "n_features": self.n_features,
                   "tags": list(self.tags),
                   "feature_map_config": (None if feature_map is None
                                          else feature_map.config())}
        if extra:
            sidecar.update(extra)
        path.with_suffix(".json").write_text(dumps_json(sidecar))

    @classmethod
    def from_csv(cls, path):
        """Read a dump written by :meth:`to_csv`; returns ``(set, sidecar)``."""
        path = Path(path)
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "label":
                raise ValueError(f"{path}: not a training-set CSV")
            for row in reader:
                rows.append(row)
        n_features = len(header) - 1
        y = np.array([int(r[0]) for r in rows], dtype=np.int64)
        X = np.array([[float(v) for v in r[1:]] for r in rows],
                     dtype=np.float64).reshape(len(rows), n_features)
        sidecar_path = path.with_suffix(".json")
        sidecar = (json.loads(sidecar_path.read_text())
                   if sidecar_path.exists() else {})
        tags = sidecar.get("tags") or ["unknown"] * len(y)
        return cls(X, y, list(tags)), sidecar


def train_forest(training_set, **params):
    """Fit a :class:`RandomForest` on a :class:`TrainingSet`."""
    if not len(training_set):
        raise ValueError("empty training set")
    return RandomForest(**params).fit(training_set.X, training_set.y)


def predict_proba(model, x):
    """Merge score (probability of +1) for a single feature vector."""
    return float(model.positive_proba(np.asarray(x)[None, :])[0])
