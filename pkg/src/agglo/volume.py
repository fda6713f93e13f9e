"""Dense n-dimensional volumes: NDV file I/O, voxel adjacency and watershed.

Label volumes are ``uint64`` arrays where 0 marks boundary/ignore voxels.
Cue volumes are ``float64`` arrays shaped ``(channels, *spatial)`` with
values in [0, 1]; channel 0 is the boundary probability by convention.
"""

import heapq
import itertools
import struct

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._validation import MAX_NDIM, check_cue_volume, check_label_volume

MAGIC = b"NDVOL1\n"
DTYPE_LABEL = 1
DTYPE_CUE = 2
_DTYPES = {DTYPE_LABEL: np.dtype("<u8"), DTYPE_CUE: np.dtype("<f8")}

CONNECTIVITIES = ("face", "full")


class VolumeFormatError(ValueError):
    """Raised when an NDV file is malformed or violates volume invariants."""


# --- file I/O -------------------------------------------------------------

def save_volume(volume, path, kind=None):
    """Write a label or cue volume to `path` in NDV format.

    Parameters
    ----------
    volume : array
        Integer arrays are written as label volumes. Float arrays are
        written as cue volumes shaped ``(channels, *spatial)``.
    path : str or path-like
    kind : {'label', 'cue'}, optional
        Override the kind inferred from the dtype.
    """
    arr = np.asarray(volume)
    if kind is None:
        kind = "cue" if arr.dtype.kind == "f" else "label"
    if kind == "label":
        arr = check_label_volume(arr)
        code, channels, extents = DTYPE_LABEL, 1, arr.shape
    elif kind == "cue":
        arr = check_cue_volume(arr)
        code, channels, extents = DTYPE_CUE, arr.shape[0], arr.shape[1:]
    else:
        raise ValueError(f"unknown volume kind {kind!r}")
    if channels > 255:
        raise ValueError("at most 255 channels can be stored")
    header = MAGIC + struct.pack("<BBB", code, len(extents), channels)
    header += struct.pack(f"<{len(extents)}Q", *extents)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_volume(path):
    """Read an NDV file.

    Returns
    -------
    volume : ndarray
        ``uint64`` array of the stored extents for label files, or
        ``float64`` array shaped ``(channels, *extents)`` for cue files.

    Raises
    ------
    VolumeFormatError
        On a bad magic, unknown dtype code, inconsistent header, payload
        length mismatch, or cue values outside [0, 1].
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:7] != MAGIC:
        raise VolumeFormatError(f"{path}: malformed header (bad magic)")
    code, ndim, channels = raw[7], raw[8], raw[9]
    if code not in _DTYPES:
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise VolumeFormatError(f"{path}: malformed header (ndim={ndim})")
    if channels < 1 or (code == DTYPE_LABEL and channels != 1):
        raise VolumeFormatError(f"{path}: malformed header "
                                f"(channels={channels})")
    end = 10 + 8 * ndim
    if len(raw) < end:
        raise VolumeFormatError(f"{path}: malformed header (truncated)")
    extents = struct.unpack(f"<{ndim}Q", raw[10:end])
    if min(extents) < 1:
        raise VolumeFormatError(f"{path}: malformed header (zero extent)")
    count = channels * int(np.prod(extents, dtype=np.int64))
    if len(raw) - end != count * 8:
        raise VolumeFormatError(
            f"{path}: payload length mismatch (expected {count * 8} bytes, "
            f"found {len(raw) - end})")
    data = np.frombuffer(raw, dtype=_DTYPES[code], offset=end, count=count)
    if code == DTYPE_LABEL:
        return data.astype(np.uint64).reshape(extents)
    data = data.astype(np.float64).reshape((channels,) + tuple(extents))
    if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
        raise VolumeFormatError(f"{path}: cue value out of range [0, 1]")
    return data


# --- adjacency ------------------------------------------------------------

def neighbor_offsets(ndim, connectivity="face"):
    """All neighbor offsets for the given connectivity.

    'face' yields the 2*ndim axis-aligned offsets; 'full' yields all
    3**ndim - 1 offsets.
    """
    if connectivity == "face":
        offsets = []
        for axis in range(ndim):
            for step in (-1, 1):
                off = [0] * ndim
                off[axis] = step
                offsets.append(tuple(off))
        return offsets
    if connectivity == "full":
        return [off for off in itertools.product((-1, 0, 1), repeat=ndim)
                if any(off)]
    raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, "
                     f"got {connectivity!r}")


def _half_offsets(ndim, connectivity):
    # one offset per symmetric pair: first nonzero component positive
    return [off for off in neighbor_offsets(ndim, connectivity)
            if next(c for c in off if c) > 0]


def _shifted(off):
    src, dst = [], []
    for c in off:
        if c > 0:
            src.append(slice(0, -c))
            dst.append(slice(c, None))
        elif c < 0:
            src.append(slice(-c, None))
            dst.append(slice(0, c))
        else:
            src.append(slice(None))
            dst.append(slice(None))
    return tuple(src), tuple(dst)


def adjacent_pairs(shape, connectivity="face"):
    """Flat index arrays ``(a, b)`` listing every adjacent voxel pair once."""
    idx = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    srcs, dsts = [], []
    for off in _half_offsets(len(shape), connectivity):
        s, d = _shifted(off)
        srcs.append(idx[s].ravel())
        dsts.append(idx[d].ravel())
    if not srcs:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(srcs), np.concatenate(dsts)


def neighbor_table(shape, connectivity="face"):
    """Array of shape (n_voxels, n_offsets) of flat neighbor indices, -1 if
    the neighbor falls outside the volume."""
    offsets = neighbor_offsets(len(shape), connectivity)
    n = int(np.prod(shape))
    idx = np.arange(n, dtype=np.int64).reshape(shape)
    table = np.full((n, len(offsets)), -1, dtype=np.int64)
    for k, off in enumerate(offsets):
        s, d = _shifted(off)
        table[idx[s].ravel(), k] = idx[d].ravel()
    return table


# --- minima and watershed -------------------------------------------------

def regional_minima(cues, channel=0, connectivity="face"):
    """Label the regional minima of one cue channel.

    A regional minimum is a connected plateau of equal values whose
    neighbors are all strictly higher. Minima are numbered from 1 in
    ascending order of their lowest flat voxel index; other voxels are 0.
    """
    cues = np.asarray(cues, dtype=np.float64)
    if cues.ndim < 2:
        cues = cues[np.newaxis]
    if not 0 <= channel < cues.shape[0]:
        raise ValueError(f"channel {channel} out of range for "
                         f"{cues.shape[0]} channels")
    image = cues[channel]
    values = image.ravel()
    n = values.size
    a, b = adjacent_pairs(image.shape, connectivity)
    flat = values[a] == values[b]
    graph = coo_matrix((np.ones(flat.sum(), dtype=np.int8),
                        (a[flat], b[flat])), shape=(n, n))
    n_plateaus, plateau = connected_components(graph, directed=False)
    is_min = np.ones(n_plateaus, dtype=bool)
    higher = np.where(values[a] < values[b], b, a)[~flat]
    is_min[plateau[higher]] = False
    first = np.full(n_plateaus, n, dtype=np.int64)
    np.minimum.at(first, plateau, np.arange(n))
    minima = np.flatnonzero(is_min)
    ids = np.zeros(n_plateaus, dtype=np.uint64)
    ids[minima[np.argsort(first[minima], kind="stable")]] = np.arange(
        1, minima.size + 1, dtype=np.uint64)
    return ids[plateau].reshape(image.shape)


def watershed(cues, seeds, channel=0, connectivity="face"):
    """Seeded priority-flood watershed.

    Voxels are popped in ascending (cue value, flat index) order starting
    from all seed voxels; each pop claims its unlabeled neighbors for its
    own basin. Every voxel ends up labeled, and seed labels are preserved.

    Parameters
    ----------
    cues : array
        Cue volume ``(channels, *shape)`` or a single-channel ``shape``
        array.
    seeds : array of int, shape `shape`
        Nonzero voxels are seeds.
    channel : int
        Cue channel to flood.
    connectivity : {'face', 'full'}

    Returns
    -------
    labels : uint64 array
    """
    seeds = check_label_volume(seeds, "seeds")
    cues = check_cue_volume(cues, seeds.shape)
    if not 0 <= channel < cues.shape[0]:
        raise ValueError(f"channel {channel} out of range for "
                         f"{cues.shape[0]} channels")
    out = seeds.ravel().copy()
    seeded = np.flatnonzero(out)
    if seeded.size == 0:
        raise ValueError("watershed needs at least one nonzero seed")
    values = cues[channel].ravel().tolist()
    nbrs = neighbor_table(seeds.shape, connectivity).tolist()
    labels = out.tolist()
    heap = [(values[i], i) for i in seeded.tolist()]
    heapq.heapify(heap)
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        _, i = pop(heap)
        lab = labels[i]
        for j in nbrs[i]:
            if j >= 0 and labels[j] == 0:
                labels[j] = lab
                push(heap, (values[j], j))
    return np.array(labels, dtype=np.uint64).reshape(seeds.shape)
