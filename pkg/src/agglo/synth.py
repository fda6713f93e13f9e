"""Seeded synthetic benchmark: Voronoi gold standard, noisy cues, superpixels.

All randomness comes from splitmix64 streams derived from one master seed
(see ``agglo._random``), and region geometry uses integer arithmetic, so a
given config yields identical volumes on every platform.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import _random
from .volume import regional_minima, watershed

_SEEDS, _BOUNDARY_NOISE, _TEXTURE, _TEXTURE_NOISE = range(4)


@dataclass
class SynthConfig:
    """Parameters of one synthetic volume.

    Attributes
    ----------
    shape : tuple of int
    n_regions : int
        Number of Voronoi seed points (k).
    blur : int
        Box-blur radius applied to the boundary indicator.
    boundary_noise : float
        Amplitude of uniform noise added to the boundary channel.
    texture : bool
        Add a second channel holding a per-region value.
    texture_noise : float
        Amplitude of uniform noise added to the texture channel.
    seed : int
    """

    shape: tuple = (128, 128)
    n_regions: int = 20
    blur: int = 1
    boundary_noise: float = 0.3
    texture: bool = True
    texture_noise: float = 0.1
    seed: int = 42

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if not self.shape or min(self.shape) < 1 or len(self.shape) > 8:
            raise ValueError(f"invalid shape {self.shape}")
        if self.n_regions < 2:
            raise ValueError("need at least 2 regions")
        if self.n_regions > int(np.prod(self.shape)):
            raise ValueError("more regions than voxels")
        if self.blur < 0:
            raise ValueError("blur radius must be >= 0")
        for name in ("boundary_noise", "texture_noise"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def voronoi_labels(shape, points, chunk=65536):
    """Label each voxel with 1 + index of the nearest point (squared
    Euclidean distance, ties to the lower index)."""
    points = np.asarray(points, dtype=np.int64)
    n = int(np.prod(shape))
    coords = np.indices(shape, dtype=np.int64).reshape(len(shape), -1).T
    out = np.empty(n, dtype=np.uint64)
    for start in range(0, n, chunk):
        c = coords[start:start + chunk]
        d2 = ((c[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + chunk] = np.argmin(d2, axis=1) + 1
    return out.reshape(shape)


def boundary_indicator(labels):
    """1.0 where a voxel has a face neighbor with a different label."""
    labels = np.asarray(labels)
    ind = np.zeros(labels.shape, dtype=bool)
    for axis in range(labels.ndim):
        lo = [slice(None)] * labels.ndim
        hi = [slice(None)] * labels.ndim
        lo[axis], hi[axis] = slice(0, -1), slice(1, None)
        diff = labels[tuple(lo)] != labels[tuple(hi)]
        ind[tuple(lo)] |= diff
        ind[tuple(hi)] |= diff
    return ind.astype(np.float64)


def generate(config=None, **overrides):
    """Generate ``(gt, cues, superpixels)`` for a :class:`SynthConfig`.

    Channel 0 of `cues` is the box-blurred boundary indicator plus noise;
    channel 1 (if enabled) is a random per-region level plus noise. The
    superpixels are the watershed of channel 0 seeded at its regional
    minima.
    """
    if config is None:
        config = SynthConfig(**overrides)
    elif overrides:
        config = SynthConfig(**{**config.to_dict(), **overrides})
    shape, k = config.shape, config.n_regions
    n = int(np.prod(shape))

    raw = _random.integers(_random.stream_state(config.seed, _SEEDS),
                           k * len(shape), 1 << 62)
    points = raw.reshape(k, len(shape)) % np.array(shape, dtype=np.int64)
    gt = voronoi_labels(shape, points)

    boundary = boundary_indicator(gt)
    if config.blur:
        boundary = uniform_filter(boundary, size=2 * config.blur + 1,
                                  mode="nearest")
    sigma = config.boundary_noise
    noise = _random.uniform(
        _random.stream_state(config.seed, _BOUNDARY_NOISE), n)
    channels = [np.clip(boundary + (2 * noise.reshape(shape) - 1) * sigma,
                        0.0, 1.0)]
    if config.texture:
        level = _random.uniform(_random.stream_state(config.seed, _TEXTURE), k)
        tnoise = _random.uniform(
            _random.stream_state(config.seed, _TEXTURE_NOISE), n)
        texture = level[gt.astype(np.int64) - 1] \
            + (2 * tnoise.reshape(shape) - 1) * config.texture_noise
        channels.append(np.clip(texture, 0.0, 1.0))
    cues = np.stack(channels)
    sp = watershed(cues, regional_minima(cues, 0), channel=0)
    return gt, cues, sp
