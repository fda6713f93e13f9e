"""Learned hierarchical agglomeration of superpixels into segments.

The pipeline is: superpixels (:mod:`agglo.volume`), a region adjacency
graph with mergeable statistics (:mod:`agglo.rag`), edge features
(:mod:`agglo.features`), a random-forest merge policy (:mod:`agglo.classify`)
trained by guided agglomeration (:mod:`agglo.learn`), and region metrics
(:mod:`agglo.evaluate`). :mod:`agglo.synth` generates seeded benchmarks.
"""

__version__ = "0.1.0"

from .classify import (RandomForest, TrainingSet, load_model, save_model,
                       train_forest)
from .estimator import (Agglomerator, MeanAgglomerator, RandomAgglomerator,
                        segment)
from .evaluate import (adjusted_rand_error, adjusted_rand_index, contingency,
                       covering, evaluate, ods_ois, rand_index, split_vi,
                       split_vi_sweep, vi, vi_breakdown)
from .features import FeatureMap, default_feature_map
from .learn import best_agglomeration, flat_train, gala_epoch, lash_epoch, train
from .rag import (Dendrogram, LearnedPolicy, MeanBoundary, Rag,
                  apply_threshold, build_rag)
from .synth import SynthConfig, generate
from .volume import load_volume, regional_minima, save_volume, watershed
