"""Paired CBCT/CT slice datasets read from a directory of GVOL files."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import DatasetError
from .io import gvol_read
from .losses import hu_to_norm

_NAME = re.compile(r"^(cbct|ct|labels)_(\w+)\.gvol$")


def resize_nearest(img: np.ndarray, size) -> np.ndarray:
    """Nearest-neighbour resize to ``size`` (an int for square output, or (H, W))."""
    oh, ow = (size, size) if np.isscalar(size) else size
    h, w = img.shape
    if (h, w) == (oh, ow):
        return img
    rows = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    cols = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    return img[np.ix_(rows, cols)]


def _slices(vox: np.ndarray) -> List[np.ndarray]:
    return [vox] if vox.ndim == 2 else list(vox)


@dataclass
class PairedDataset:
    """Slice pairs in HU; ``cbct[i]`` and ``ct[i]`` share their shape."""

    cbct: List[np.ndarray] = field(default_factory=list)
    ct: List[np.ndarray] = field(default_factory=list)
    labels: List[Optional[np.ndarray]] = field(default_factory=list)
    keys: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ct)

    def arrays(self, size: int) -> Tuple[np.ndarray, np.ndarray]:
        """All pairs resized to ``size`` and normalised, shaped [N, 1, size, size]."""
        x = np.stack([hu_to_norm(resize_nearest(s, size)) for s in self.cbct])
        y = np.stack([hu_to_norm(resize_nearest(s, size)) for s in self.ct])
        return x[:, None].astype(np.float32), y[:, None].astype(np.float32)


def dataset_build(directory) -> PairedDataset:
    """Load every ``cbct_<key>.gvol`` / ``ct_<key>.gvol`` pair in ``directory``.

    ``labels_<key>.gvol`` files are attached when present. Unpaired files
    raise DatasetError listing them.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    found = {"cbct": {}, "ct": {}, "labels": {}}
    for path in sorted(directory.iterdir()):
        m = _NAME.match(path.name)
        if m:
            found[m.group(1)][m.group(2)] = path
    orphans = sorted(
        [p.name for k, p in found["cbct"].items() if k not in found["ct"]]
        + [p.name for k, p in found["ct"].items() if k not in found["cbct"]])
    if orphans:
        raise DatasetError(f"unpaired files in {directory}: {', '.join(orphans)}", orphans)

    ds = PairedDataset()
    for key in sorted(found["ct"]):
        cb = gvol_read(found["cbct"][key]).voxels
        ct = gvol_read(found["ct"][key]).voxels
        if cb.shape != ct.shape:
            raise DatasetError(f"pair {key}: cbct {cb.shape} vs ct {ct.shape}")
        lab = gvol_read(found["labels"][key]).voxels if key in found["labels"] else None
        lab_slices = _slices(lab) if lab is not None else [None] * len(_slices(ct))
        for i, (c, t, l) in enumerate(zip(_slices(cb), _slices(ct), lab_slices)):
            ds.cbct.append(c)
            ds.ct.append(t)
            ds.labels.append(l)
            ds.keys.append(key if ct.ndim == 2 else f"{key}:{i}")
    return ds


def dataset_iter(x: np.ndarray, y: np.ndarray, batch: int = 4, seed: int = 0,
                 epoch: int = 0) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield shuffled (x, y) batches; the order depends only on (seed, epoch)."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(x))
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        yield x[idx], y[idx]
