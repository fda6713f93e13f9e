"""Input validation helpers shared by the public entry points."""

import numpy as np

MAX_NDIM = 8


def check_label_volume(labels, name="labels"):
    """Return `labels` as a C-contiguous uint64 array, validating its shape."""
    arr = np.asarray(labels)
    if arr.ndim < 1 or arr.ndim > MAX_NDIM:
        raise ValueError(f"{name} must have between 1 and {MAX_NDIM} "
                         f"dimensions, got {arr.ndim}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must contain integer labels")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"{name} has non-integer dtype {arr.dtype}")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative labels")
    return np.ascontiguousarray(arr, dtype=np.uint64)


def check_cue_volume(cues, shape=None, name="cues"):
    """Return `cues` as a float64 array of shape (channels, *shape).

    A cue array with the same dimensionality as `shape` is treated as a
    single channel.
    """
    arr = np.asarray(cues, dtype=np.float64)
    if shape is not None:
        shape = tuple(shape)
        if arr.shape == shape:
            arr = arr[np.newaxis]
        if arr.shape[1:] != shape:
            raise ValueError(f"{name} spatial shape {arr.shape[1:]} does not "
                             f"match {shape}")
    if arr.ndim < 2 or arr.ndim - 1 > MAX_NDIM:
        raise ValueError(f"{name} must be shaped (channels, *spatial)")
    if arr.shape[0] < 1 or arr.size == 0:
        raise ValueError(f"{name} has no channels")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise ValueError(f"{name} value out of range [0, 1]")
    return np.ascontiguousarray(arr)


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {names[0]} {np.shape(a)} vs "
                         f"{names[1]} {np.shape(b)}")


def check_threshold(t):
    t = float(t)
    if np.isnan(t):
        raise ValueError("threshold must not be NaN")
    return t
