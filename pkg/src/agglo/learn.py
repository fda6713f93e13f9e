"""Training-data generation for learned agglomeration.

Three strategies produce :class:`~agglo.classify.TrainingSet` objects:

* flat: one example per edge of the initial superpixel graph;
* gala: agglomerate under the current policy, letting only merges that the
  gold standard endorses go through, and record every decision;
* lash: agglomerate unconditionally and label each merge by the sign of its
  effect on the Rand index.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_label_volume, check_same_shape
from .classify import TrainingSet, train_forest
from .rag import LearnedPolicy, MeanBoundary, RandomPolicy, build_rag, relabel

log = logging.getLogger(__name__)

SHOULD_MERGE = -1
DONT_MERGE = 1
UNKNOWN = 0


class AgglomerationInvariantError(AssertionError):
    """An impure node showed up during guided agglomeration."""


@dataclass
class BestAssignment:
    """Best agglomeration of superpixels given a gold standard.

    Attributes
    ----------
    mapping : dict
        Superpixel id -> gold id of maximal overlap (0 for superpixels that
        only overlap ignore voxels).
    overlaps : dict
        Superpixel id -> ``{gold id: voxel count}`` over nonzero gold voxels.
    ignored : set
        Superpixels assigned 0.
    """

    mapping: dict
    overlaps: dict
    ignored: set = field(default_factory=set)

    def __getitem__(self, sp):
        return self.mapping[sp]

    def node_gold(self, node):
        """Gold id shared by all of `node`'s superpixels, or None."""
        golds = {self.mapping[m] for m in node.members}
        return golds.pop() if len(golds) == 1 else None

    def labels(self, superpixels):
        """Project the assignment onto a superpixel volume."""
        return relabel(superpixels, self.mapping)


def best_agglomeration(superpixels, gt):
    """Assign every superpixel to the gold segment it overlaps most.

    Gold voxels labeled 0 are ignored; ties go to the smaller gold id.
    """
    sp = check_label_volume(superpixels, "superpixels").ravel()
    gt = check_label_volume(gt, "gt").ravel()
    check_same_shape(sp, gt, ("superpixels", "gt"))
    ids = np.unique(sp)
    ids = ids[ids != 0].tolist()
    keep = (sp != 0) & (gt != 0)
    pairs, counts = np.unique(np.stack([sp[keep], gt[keep]]), axis=1,
                              return_counts=True)
    overlaps = {i: {} for i in ids}
    for s, g, c in zip(pairs[0].tolist(), pairs[1].tolist(), counts.tolist()):
        overlaps[s][g] = c
    mapping, ignored = {}, set()
    for s in ids:
        row = overlaps[s]
        if row:
            mapping[s] = min(row, key=lambda g: (-row[g], g))
        else:
            mapping[s] = 0
            ignored.add(s)
    if ignored:
        log.warning("%d superpixels overlap only ignore voxels",
                    len(ignored))
    return BestAssignment(mapping, overlaps, ignored)


def label_edge(assignment, node_u, node_v):
    """-1 if both nodes lie inside one gold segment, +1 if they lie inside
    two different ones, 0 otherwise."""
    gu = assignment.node_gold(node_u)
    gv = assignment.node_gold(node_v)
    if gu is None or gv is None or gu == 0 or gv == 0:
        return UNKNOWN
    return SHOULD_MERGE if gu == gv else DONT_MERGE


def flat_train(rag, assignment, feature_map, tag="flat"):
    """One example per labeled edge of an unmerged graph."""
    pairs, labels = [], []
    for u, v in sorted(rag.edges):
        lab = label_edge(assignment, rag.nodes[u], rag.nodes[v])
        if lab != UNKNOWN:
            pairs.append((u, v))
            labels.append(lab)
    if not pairs:
        return TrainingSet.empty(feature_map.n_features)
    X = feature_map.compute_many(rag, pairs)
    return TrainingSet(X, np.array(labels), [tag] * len(labels))


def _featurizer(policy, feature_map):
    # per-epoch policy that remembers the features it scored each edge with
    if isinstance(policy, LearnedPolicy) and policy.feature_map == feature_map:
        policy = LearnedPolicy(feature_map, policy.classifier, remember=True)
        return policy, policy.features
    return policy, feature_map.compute


def gala_epoch(rag, policy, assignment, feature_map, tag="gala",
               skip_ignored=False):
    """One guided agglomeration epoch. Mutates `rag`.

    The live minimum edge is popped; its features are recorded with its
    label. Should-merge edges are merged (the new edges are rescored by
    `policy`); don't-merge edges are dropped until one of their endpoints
    changes. The loop ends when no live edges remain, at which point every
    gold segment's connected superpixels have been joined.

    A popped edge touching a superpixel that overlaps only ignore voxels
    has label 0, which guided training should never meet; it raises
    :class:`AgglomerationInvariantError` unless `skip_ignored` is set, in
    which case the edge is dropped without an example.
    """
    policy, featurize = _featurizer(policy, feature_map)
    rag.set_policy(policy)
    gold = {}
    for n, node in rag.nodes.items():
        g = assignment.node_gold(node)
        if g is None:
            raise AgglomerationInvariantError(f"node {n} is impure at the "
                                              f"start of an epoch")
        gold[n] = g
    examples = []
    while True:
        top = rag.pop()
        if top is None:
            break
        score, u, v = top
        gu, gv = gold[u], gold[v]
        if gu == 0 or gv == 0:
            if skip_ignored:
                continue
            raise AgglomerationInvariantError(
                f"edge ({u}, {v}) has label 0: superpixel overlaps only "
                f"ignore voxels")
        x = featurize(rag, u, v)
        if gu == gv:
            examples.append((x, SHOULD_MERGE))
            s = rag.merge(u, v, score=score)
            del gold[v if s == u else u]
        else:
            examples.append((x, DONT_MERGE))
    return TrainingSet.from_examples(examples, feature_map.n_features, tag)


def delta_rand_index(row_a, row_b, n_total):
    """Change in Rand index caused by merging two segments.

    Parameters
    ----------
    row_a, row_b : dict
        ``{gold id: overlap count}`` for each segment.
    n_total : int
        Number of voxels counted in the contingency table.
    """
    common = sum(n * row_b.get(g, 0) for g, n in row_a.items())
    na, nb = sum(row_a.values()), sum(row_b.values())
    pairs = n_total * (n_total - 1) // 2
    return (2 * common - na * nb) / pairs if pairs else 0.0


def lash_epoch(rag, policy, assignment, feature_map, tag="lash"):
    """One unguided epoch. Mutates `rag`.

    Every popped edge is merged. Its example is labeled -1 if the merge
    raises the Rand index against the gold standard and +1 if it lowers it;
    merges that leave it unchanged produce no example.
    """
    policy, featurize = _featurizer(policy, feature_map)
    rag.set_policy(policy)
    rows = {n: {} for n in rag.nodes}
    for n, node in rag.nodes.items():
        for m in node.members:
            for g, c in assignment.overlaps.get(m, {}).items():
                rows[n][g] = rows[n].get(g, 0) + c
    n_total = sum(sum(r.values()) for r in rows.values())
    examples = []
    while True:
        top = rag.pop()
        if top is None:
            break
        score, u, v = top
        ra, rb = rows[u], rows[v]
        common = sum(n * rb.get(g, 0) for g, n in ra.items())
        delta = 2 * common - sum(ra.values()) * sum(rb.values())
        if delta:
            x = featurize(rag, u, v)
            examples.append((x, SHOULD_MERGE if delta > 0 else DONT_MERGE))
        s = rag.merge(u, v, score=score)
        a = v if s == u else u
        merged = rows.pop(a)
        target = rows[s]
        for g, c in merged.items():
            target[g] = target.get(g, 0) + c
    return TrainingSet.from_examples(examples, feature_map.n_features, tag)


# --- training loops ---------------------------------------------------------

@dataclass
class TrainingImage:
    """A superpixel graph template with its best assignment."""

    rag: object
    assignment: BestAssignment


def prepare_image(superpixels, cues, gt, feature_map, connectivity="face"):
    rag = build_rag(superpixels, cues, connectivity=connectivity,
                    with_spatial=feature_map.needs_spatial,
                    bins=feature_map.bins)
    feature_map.check_rag(rag)
    return TrainingImage(rag, best_agglomeration(superpixels, gt))


def _initial_policy(init, seed):
    if init == "mean":
        return MeanBoundary(0)
    if init == "random":
        return RandomPolicy(seed)
    raise ValueError(f"unknown initial policy {init!r}")


def _epoch_examples(job):
    img, policy, feature_map, method, mixed, k, keep = job
    out = TrainingSet.empty(feature_map.n_features)
    rag = None
    if method == "gala" or mixed:
        rag = img.rag.copy()
        out = out + gala_epoch(rag, policy, img.assignment, feature_map,
                               tag=f"gala-{k}")
    if method == "lash" or mixed:
        out = out + lash_epoch(img.rag.copy(), policy, img.assignment,
                               feature_map, tag=f"lash-{k}")
    return out, rag if keep else None


def train(images, feature_map, method="gala", epochs=5, init="flat",
          mixed=False, forest_params=None, jobs=1, callback=None):
    """Run the training loop on prepared images.

    Parameters
    ----------
    images : list of TrainingImage
    feature_map : FeatureMap
    method : {'flat', 'gala', 'lash'}
    epochs : int
        Agglomerative epochs after the initial policy (ignored for 'flat').
    init : {'flat', 'mean', 'random'}
        Initial policy: a classifier trained on the flat set, or a
        training-free policy.
    mixed : bool
        With method 'gala', also add lash examples in every epoch.
    forest_params : dict
        Keyword arguments for :class:`~agglo.classify.RandomForest`.
    jobs : int
        Worker processes for the per-image epochs. Results are gathered in
        image order, so the output does not depend on it.
    callback : callable, optional
        Called as ``callback(k, image_index, rag)`` after each guided epoch
        with the graph in its terminal state.

    Returns
    -------
    model : RandomForest
        Final classifier, with ``feature_map_`` attached.
    training_set : TrainingSet
        Examples the final classifier was trained on.
    """
    forest_params = dict(forest_params or {})
    if method not in ("flat", "gala", "lash"):
        raise ValueError(f"unknown training method {method!r}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if method == "flat":
        epochs = 0
    if init == "flat":
        current = TrainingSet.empty(feature_map.n_features)
        for img in images:
            current = current + flat_train(img.rag, img.assignment,
                                           feature_map)
        model = train_forest(current, **forest_params)
        policy = LearnedPolicy(feature_map, model)
        log.info("flat: %d examples", len(current))
    else:
        if epochs < 1:
            raise ValueError(f"init={init!r} needs at least one epoch")
        current = TrainingSet.empty(feature_map.n_features)
        model = None
        policy = _initial_policy(init, forest_params.get("seed", 0))

    pool = ProcessPoolExecutor(jobs) if jobs > 1 and len(images) > 1 \
        else None
    try:
        for k in range(1, epochs + 1):
            work = [(img, policy, feature_map, method, mixed, k,
                     callback is not None) for img in images]
            parts = pool.map(_epoch_examples, work) if pool \
                else map(_epoch_examples, work)
            epoch = TrainingSet.empty(feature_map.n_features)
            for i, (part, rag) in enumerate(parts):
                epoch = epoch + part
                if callback is not None and rag is not None:
                    callback(k, i, rag)
            # gala accumulates every epoch; lash keeps only the latest one
            current = current + epoch if method == "gala" else epoch
            model = train_forest(current, **forest_params)
            policy = LearnedPolicy(feature_map, model)
            log.info("epoch %d: %d new examples, %d total", k, len(epoch),
                     len(current))
    finally:
        if pool is not None:
            pool.shutdown()
    model.feature_map_ = feature_map
    return model, current


def gala_train(superpixels, cues, gt, feature_map, epochs=5, init="flat",
               mixed=False, connectivity="face", **forest_params):
    """Guided agglomerative training on one image; returns
    ``(model, training_set)``."""
    img = prepare_image(superpixels, cues, gt, feature_map, connectivity)
    return train([img], feature_map, "gala", epochs, init, mixed,
                 forest_params)


def lash_train(superpixels, cues, gt, feature_map, epochs=5,
               connectivity="face", **forest_params):
    """Rand-index-labeled agglomerative training on one image, keeping only
    the latest epoch's examples; returns ``(model, training_set)``."""
    img = prepare_image(superpixels, cues, gt, feature_map, connectivity)
    return train([img], feature_map, "lash", epochs,
                 forest_params=forest_params)
