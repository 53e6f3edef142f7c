"""Dataset loading, normalization and synthetic fixtures."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class SeriesDataset:
    x: np.ndarray  # [N, C, L]
    y: np.ndarray | None
    num_classes: int
    name: str = ""
    split: str = "train"
    label_values: tuple = ()  # original label for each class index

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        if self.x.ndim != 3:
            raise DataError(f"series array must be [N, C, L], got shape {self.x.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise DataError(f"{self.x.shape[0]} series but {self.y.shape} labels")
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
                raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.x.shape[0]

    @property
    def channels(self):
        return self.x.shape[1]

    @property
    def length(self):
        return self.x.shape[2]


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C], strictly positive


def _parse_label(tok):
    v = float(tok)
    return int(v) if v.is_integer() else v


def _remap(raw, mapping, where):
    if mapping is None:
        values = sorted(set(raw))
        mapping = {v: i for i, v in enumerate(values)}
    out = []
    for i, v in enumerate(raw):
        if v not in mapping:
            raise DataError(f"{where}: label {v!r} (series {i}) not present in the training labels")
        out.append(mapping[v])
    return np.array(out, dtype=np.int64), mapping


def load_ucr_tsv(path, label_map: dict | None = None, split: str | None = None) -> SeriesDataset:
    """Read ``label<TAB>v1<TAB>...<TAB>vL`` lines into a univariate dataset.

    Labels are remapped to ``0..K-1`` by sorted order; pass the training
    split's ``label_map`` (see ``label_mapping``) when loading a test split.
    """
    path = Path(path)
    labels, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip("\r\n")
        if not line.strip():
            continue
        toks = line.split("\t")
        try:
            lab = _parse_label(toks[0])
            vals = [float(t) for t in toks[1:]]
        except ValueError as err:
            raise DataError(f"{path}:{lineno}: non-numeric token ({err})") from None
        if not vals:
            raise DataError(f"{path}:{lineno}: no values after the label")
        if any(v != v for v in vals):
            raise DataError(f"{path}:{lineno}: missing values (NaN) are not supported")
        if rows and len(vals) != len(rows[0]):
            raise DataError(f"{path}:{lineno}: ragged row with {len(vals)} values, expected {len(rows[0])}")
        labels.append(lab)
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}:1: empty file")
    y, mapping = _remap(labels, label_map, str(path))
    if split is None:
        split = "test" if "TEST" in path.name.upper() else "train"
    name = path.stem.rsplit("_", 1)[0]
    inverse = tuple(sorted(mapping, key=mapping.get))
    return SeriesDataset(np.array(rows)[:, None, :], y, len(mapping), name, split, inverse)


def label_mapping(ds: SeriesDataset) -> dict:
    return {v: i for i, v in enumerate(ds.label_values)}


def write_ucr_tsv(path, ds: SeriesDataset):
    """Write a univariate dataset back out, restoring the original labels when known."""
    if ds.channels != 1:
        raise DataError("UCR TSV holds univariate series only")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(ds)):
            lab = ds.y[i] if ds.y is not None else 0
            if ds.label_values:
                lab = ds.label_values[lab]
            fh.write("\t".join([str(lab)] + [repr(float(v)) for v in ds.x[i, 0]]) + "\n")


def load_multivariate_csv(path, label_map: dict | None = None, split: str = "train") -> SeriesDataset:
    """Read long-format ``series_id,dim,label,v1..vL`` rows into [N, C, L]."""
    path = Path(path)
    cells: dict = {}
    labels: dict = {}
    order: list = []
    length = None
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}:1: empty file") from None
        if [h.strip() for h in header[:3]] != ["series_id", "dim", "label"]:
            raise DataError(f"{path}:1: header must start with series_id,dim,label")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                sid, dim, lab = row[0].strip(), int(row[1]), _parse_label(row[2])
                vals = [float(t) for t in row[3:]]
            except (ValueError, IndexError) as err:
                raise DataError(f"{path}:{lineno}: malformed row ({err})") from None
            if any(v != v for v in vals):
                raise DataError(f"{path}:{lineno}: missing values (NaN) are not supported")
            if length is None:
                length = len(vals)
            elif len(vals) != length:
                raise DataError(f"{path}:{lineno}: ragged row with {len(vals)} values, expected {length}")
            if sid not in labels:
                labels[sid] = lab
                order.append(sid)
            elif labels[sid] != lab:
                raise DataError(f"{path}:{lineno}: series {sid!r} has inconsistent labels")
            if (sid, dim) in cells:
                raise DataError(f"{path}:{lineno}: duplicate row for series {sid!r} dim {dim}")
            cells[(sid, dim)] = vals
    if not order:
        raise DataError(f"{path}: no data rows")
    dims = sorted({d for _, d in cells})
    C = dims[-1] + 1
    if dims[0] < 0:
        raise DataError(f"{path}: negative dim index")
    x = np.empty((len(order), C, length))
    for i, sid in enumerate(order):
        for d in range(C):
            if (sid, d) not in cells:
                raise DataError(f"{path}: series {sid!r} is missing dim {d}")
            x[i, d] = cells[(sid, d)]
    y, mapping = _remap([labels[s] for s in order], label_map, str(path))
    inverse = tuple(sorted(mapping, key=mapping.get))
    return SeriesDataset(x, y, len(mapping), path.stem, split, inverse)


def znormalize(ds: SeriesDataset, stats: NormalizationStats | None = None):
    """Per-channel standardization; statistics come from ``ds`` only when ``stats`` is omitted."""
    if stats is None:
        mean = ds.x.mean(axis=(0, 2))
        std = ds.x.std(axis=(0, 2))
        std = np.where(std > 0, std, 1.0)
        stats = NormalizationStats(mean, std)
    elif stats.mean.shape != (ds.channels,):
        raise DataError(f"normalization stats have {stats.mean.shape[0]} channels, dataset has {ds.channels}")
    x = (ds.x - stats.mean[None, :, None]) / stats.std[None, :, None]
    return replace(ds, x=x), stats


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_synthetic(kind: str, n: int, length: int = 64, rng=None, channels: int = 1, num_classes: int = 2,
                   noise: float = 0.1) -> SeriesDataset:
    """Seeded toy datasets.

    ``separable``: two balanced classes of sinusoids, class 1 at twice the
    frequency of class 0, random phase. ``sinusoids``: unlabeled sums of three
    sinusoids with random amplitudes. ``blobs``: Gaussian clusters in channel
    space, each held constant over time.
    """
    from rtfn.tensor import make_rng

    rng = make_rng(0) if rng is None else rng
    t = np.arange(length) / length
    if kind == "separable":
        y = np.arange(n) % 2
        freq = np.where(y == 0, 2.0, 4.0)
        phase = rng.uniform(0, 2 * np.pi, size=(n, channels))
        x = np.sin(2 * np.pi * freq[:, None, None] * t[None, None, :] + phase[:, :, None])
        x += noise * rng.standard_normal(x.shape)
        return SeriesDataset(x, y, 2, "separable", "train", (0, 1))
    if kind == "sinusoids":
        amps = rng.uniform(0.2, 1.0, size=(n, channels, 3))
        phase = rng.uniform(0, 2 * np.pi, size=(n, channels, 3))
        freqs = np.array([1.0, 3.0, 5.0])
        x = (amps[..., None] * np.sin(2 * np.pi * freqs[None, None, :, None] * t + phase[..., None])).sum(axis=2)
        x += noise * rng.standard_normal(x.shape)
        return SeriesDataset(x, None, 1, "sinusoids", "train")
    if kind == "blobs":
        y = np.arange(n) % num_classes
        centers = 10.0 * rng.standard_normal((num_classes, channels))
        pts = centers[y] + rng.standard_normal((n, channels))
        x = np.repeat(pts[:, :, None], length, axis=2)
        return SeriesDataset(x, y, num_classes, "blobs", "train", tuple(range(num_classes)))
    raise ValueError(f"unknown synthetic kind {kind!r}; expected separable, sinusoids or blobs")
