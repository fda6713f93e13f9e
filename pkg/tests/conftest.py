import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def random_superpixels(rng, shape, k, blobby=True, zero_frac=0.0):
    """Random label map with labels drawn from 1..k.

    Blobby maps come from nearest-seed assignment and give compact regions;
    otherwise every voxel draws its label independently.
    """
    if blobby:
        pts = np.stack([rng.integers(0, s, size=k) for s in shape], axis=1)
        grid = np.indices(shape).reshape(len(shape), -1).T
        d = ((grid[:, None, :] - pts[None]) ** 2).sum(-1)
        labels = (np.argmin(d, axis=1) + 1).reshape(shape)
    else:
        labels = rng.integers(1, k + 1, size=shape)
    if zero_frac:
        labels = np.where(rng.random(shape) < zero_frac, 0, labels)
    # compact the id range so every id in 1..max is present, then shuffle
    uniq = np.unique(labels[labels > 0])
    perm = rng.permutation(len(uniq)) + 1
    lut = dict(zip(uniq.tolist(), perm.tolist()))
    lut[0] = 0
    return np.vectorize(lut.get)(labels).astype(np.uint64)


def dyadic_cues(rng, shape, channels=1, denom=64):
    """Cue values on a dyadic grid so that sums and means are exact."""
    return rng.integers(0, denom + 1, size=(channels,) + tuple(shape)) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdicts(request):
    """Per-criterion PASS/FAIL lines, printed at the end of the session."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
