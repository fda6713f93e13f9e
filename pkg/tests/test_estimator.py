import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from agglo import Agglomerator, MeanAgglomerator, RandomAgglomerator
from agglo.synth import generate


@pytest.fixture(scope="module")
def pair():
    train = generate(shape=(40, 40), n_regions=6, seed=1)
    test = generate(shape=(40, 40), n_regions=6, seed=2)
    return train, test


def test_params_and_clone():
    est = Agglomerator(method="flat", n_trees=7)
    assert est.get_params()["n_trees"] == 7
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(epochs=2)
    assert est.epochs == 2


def test_unfitted_predict_raises(pair):
    gt, cues, sp = pair[0]
    with pytest.raises(NotFittedError):
        Agglomerator().predict((sp, cues))


def test_fit_predict_score(pair):
    (gt, cues, sp), (gt2, cues2, sp2) = pair
    est = Agglomerator(method="gala", epochs=1, n_trees=10, seed=0)
    est.fit((sp, cues), gt)
    seg = est.predict((sp2, cues2))
    assert seg.shape == sp2.shape
    assert len(np.unique(seg)) < len(np.unique(sp2))
    s = est.score((sp2, cues2), gt2)
    assert s <= 0
    many = est.predict([(sp, cues), (sp2, cues2)])
    np.testing.assert_array_equal(many[1], seg)
    d = est.dendrogram((sp2, cues2))
    assert len(d) == len(np.unique(sp2)) - 1


def test_baselines(pair):
    gt, cues, sp = pair[1]
    mean = MeanAgglomerator().fit((sp, cues), gt)
    s_mean = mean.score((sp, cues), gt)
    s_rand = RandomAgglomerator(seed=1).fit((sp, cues)).score((sp, cues), gt)
    assert s_mean > s_rand
    assert mean.predict((sp, cues), threshold=0.0).tolist() == \
        sp.tolist()


def test_input_validation(pair):
    gt, cues, sp = pair[0]
    with pytest.raises(ValueError):
        Agglomerator().fit([(sp, cues)], [gt, gt])
    with pytest.raises(ValueError):
        MeanAgglomerator().fit((sp, cues[:, :5]), gt)
