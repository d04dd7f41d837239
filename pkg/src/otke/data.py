"""Datasets of variable-length feature sets: I/O, batching, synthetic data."""
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    EmptySample,
    InconsistentDimension,
    ParseError,
    SequenceTooShort,
    UnknownToken,
)
from .kernels import kmer_features

__all__ = [
    "Dataset",
    "PaddedBatch",
    "SynthSpec",
    "pad_sets",
    "make_batches",
    "load_jsonl",
    "write_jsonl",
    "load_alphabet",
    "load_sequences",
    "generate_synthetic",
]


@dataclass
class Dataset:
    """A list of feature sets with labels.

    ``labels`` holds ints for ``mode="multiclass"`` and lists of ints for
    ``mode="multilabel"``.
    """

    sets: list
    labels: list
    num_classes: int = None
    mode: str = "multiclass"
    split: str = None

    def __post_init__(self):
        self.sets = [np.asarray(x, dtype=np.float64) for x in self.sets]
        if len(self.labels) != len(self.sets):
            raise ValueError(f"{len(self.sets)} sets but {len(self.labels)} labels")
        if self.mode not in ("multiclass", "multilabel"):
            raise ValueError(f"unknown dataset mode {self.mode!r}")
        if self.mode == "multiclass":
            self.labels = [int(y) for y in self.labels]
        else:
            self.labels = [sorted(int(v) for v in y) for y in self.labels]
        flat = self.labels if self.mode == "multiclass" else [v for y in self.labels for v in y]
        if self.num_classes is None:
            self.num_classes = max(flat) + 1 if flat else 0
        if flat and (min(flat) < 0 or max(flat) >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        widths = {x.shape[1] if x.ndim == 2 else None for x in self.sets}
        if None in widths or len(widths) > 1:
            raise InconsistentDimension("every set must be 2-D with the same feature width")
        if any(len(x) == 0 for x in self.sets):
            raise EmptySample("every set needs at least one row")

    def __len__(self):
        return len(self.sets)

    @property
    def d(self):
        return self.sets[0].shape[1] if self.sets else None

    @property
    def lengths(self):
        return np.array([len(x) for x in self.sets], dtype=np.int64)

    @property
    def y(self):
        """Labels as an array (multiclass) or an (m, C) indicator matrix."""
        if self.mode == "multiclass":
            return np.asarray(self.labels, dtype=np.int64)
        Y = np.zeros((len(self), self.num_classes))
        for i, y in enumerate(self.labels):
            Y[i, y] = 1.0
        return Y

    def pooled_features(self, max_rows=None, seed=0):
        """Stack every row of every set, optionally subsampled."""
        X = np.concatenate(self.sets, axis=0)
        if max_rows is not None and X.shape[0] > max_rows:
            rng = np.random.default_rng(seed)
            X = X[np.sort(rng.choice(X.shape[0], size=max_rows, replace=False))]
        return X


@dataclass
class PaddedBatch:
    """Sets zero-padded to a common length.

    Attributes
    ----------
    features : ndarray of shape (B, n_max, d)
    lengths : ndarray of int, shape (B,)
    labels : ndarray or None
    indices : ndarray of int
        Positions of the samples in the source dataset.
    """

    features: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray = None
    indices: np.ndarray = field(default=None)

    @property
    def mask(self):
        return np.arange(self.features.shape[1])[None, :] < self.lengths[:, None]

    def trimmed(self):
        """The original variable-length sets."""
        return [self.features[b, :n] for b, n in enumerate(self.lengths)]


def pad_sets(sets, labels=None, indices=None):
    lengths = np.array([len(x) for x in sets], dtype=np.int64)
    d = sets[0].shape[1]
    feats = np.zeros((len(sets), int(lengths.max()), d))
    for b, x in enumerate(sets):
        feats[b, : len(x)] = x
    return PaddedBatch(feats, lengths, labels, indices)


def make_batches(dataset, batch_size, seed=0, shuffle=False):
    """Split a dataset into padded batches.

    Each batch is padded to its own longest set. With ``shuffle`` the order
    is a permutation drawn from ``seed``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(dataset))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(dataset))
    y = dataset.y
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batches.append(pad_sets([dataset.sets[i] for i in idx], y[idx], idx))
    return batches


def _parse_label(raw, lineno):
    if isinstance(raw, bool):
        raise ParseError(f"label must be an int or a list of ints, got {raw!r}", lineno)
    if isinstance(raw, int):
        return raw, "multiclass"
    if isinstance(raw, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
        return raw, "multilabel"
    raise ParseError(f"label must be an int or a list of ints, got {raw!r}", lineno)


def load_jsonl(path, num_classes=None, split=None):
    """Read ``{"label": ..., "features": [[...], ...]}`` records, one per line."""
    sets, labels, modes = [], [], set()
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or "features" not in rec or "label" not in rec:
                raise ParseError("record needs 'label' and 'features' keys", lineno)
            label, mode = _parse_label(rec["label"], lineno)
            values = label if isinstance(label, list) else [label]
            if any(v < 0 or (num_classes is not None and v >= num_classes) for v in values):
                bound = "" if num_classes is None else f" below {num_classes}"
                raise ParseError(f"labels must be non-negative{bound}, got {label!r}", lineno)
            feats = rec["features"]
            if not isinstance(feats, list) or len(feats) == 0:
                raise EmptySample("empty feature list", lineno)
            try:
                X = np.array(feats, dtype=np.float64)
            except (TypeError, ValueError):
                raise ParseError("features must be a rectangular list of numbers", lineno) from None
            if X.ndim != 2 or X.shape[1] == 0:
                raise ParseError(f"features must be a list of vectors, got shape {X.shape}", lineno)
            if d is None:
                d = X.shape[1]
            elif X.shape[1] != d:
                raise InconsistentDimension(f"feature width {X.shape[1]} differs from {d}", lineno)
            sets.append(X)
            labels.append(label)
            modes.add(mode)
    if len(modes) > 1:
        raise ParseError("mixed int and list labels")
    mode = modes.pop() if modes else "multiclass"
    return Dataset(sets, labels, num_classes=num_classes, mode=mode, split=split)


def write_jsonl(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for X, y in zip(dataset.sets, dataset.labels):
            fh.write(json.dumps({"label": y, "features": X.tolist()}))
            fh.write("\n")


def load_alphabet(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def load_sequences(path, alphabet_path, kmer_size, num_classes=None, split=None):
    """Read a FASTA-like file whose headers are ``><label>``.

    Labels may be comma-separated for multilabel data. Each sequence becomes
    a set of normalized one-hot k-mers.
    """
    alphabet = load_alphabet(alphabet_path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                try:
                    parts = [int(v) for v in line[1:].split(",")]
                except ValueError:
                    raise ParseError(f"bad label header {line!r}", lineno) from None
                records.append([parts, [], lineno])
            elif not records:
                raise ParseError("sequence data before the first header", lineno)
            else:
                records[-1][1].append(line)
    multilabel = any(len(r[0]) > 1 for r in records)
    sets, labels = [], []
    for idx, (label, chunks, lineno) in enumerate(records):
        seq = "".join(chunks)
        try:
            sets.append(kmer_features(seq, alphabet, kmer_size))
        except (UnknownToken, SequenceTooShort) as exc:
            raise type(exc)(f"record {idx} (line {lineno}): {exc}") from None
        labels.append(label if multilabel else label[0])
    return Dataset(
        sets,
        labels,
        num_classes=num_classes,
        mode="multilabel" if multilabel else "multiclass",
        split=split,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the motif-detection generator.

    Every sample is Gaussian background noise with a few class-specific
    motif vectors (plus small noise) written at random positions.
    """

    classes: int = 5
    motifs_per_class: int = 3
    motif_dim: int = 16
    motif_count_range: tuple = (2, 5)
    set_length_range: tuple = (20, 100)
    background_std: float = 1.0
    motif_std: float = 0.1
    motif_radius: float = 5.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.motif_count_range
        n_lo, n_hi = self.set_length_range
        if self.classes < 1 or self.motifs_per_class < 1 or self.motif_dim < 1:
            raise ValueError("classes, motifs_per_class and motif_dim must be positive")
        if not 1 <= lo <= hi or not 1 <= n_lo <= n_hi:
            raise ValueError("ranges must be positive and ordered")
        if n_lo < hi:
            raise ValueError("minimum set length must be >= maximum motif count")
        if self.background_std < 0 or self.motif_std < 0 or self.motif_radius <= 0:
            raise ValueError("standard deviations must be >= 0 and motif_radius > 0")


def motif_templates(spec):
    """Class motifs on the sphere of radius ``motif_radius``, shape (C, M, d)."""
    rng = np.random.default_rng([spec.seed, 0])
    m = rng.normal(size=(spec.classes, spec.motifs_per_class, spec.motif_dim))
    m /= np.linalg.norm(m, axis=-1, keepdims=True)
    return spec.motif_radius * m


def _draw(spec, motifs, rng, m):
    sets, labels = [], []
    for _ in range(m):
        c = int(rng.integers(spec.classes))
        n = int(rng.integers(spec.set_length_range[0], spec.set_length_range[1] + 1))
        X = rng.normal(0.0, spec.background_std, size=(n, spec.motif_dim))
        count = int(rng.integers(spec.motif_count_range[0], spec.motif_count_range[1] + 1))
        pos = rng.choice(n, size=count, replace=False)
        which = rng.integers(spec.motifs_per_class, size=count)
        X[pos] = motifs[c, which] + rng.normal(0.0, spec.motif_std, size=(count, spec.motif_dim))
        sets.append(X)
        labels.append(c)
    return sets, labels


def generate_synthetic(spec, m_train, m_val=0, m_test=0):
    """Draw train, validation and test splits; fully determined by ``spec.seed``.

    Returns
    -------
    (train, val, test) : tuple of Dataset
    """
    motifs = motif_templates(spec)
    rng = np.random.default_rng([spec.seed, 1])
    out = []
    for split, m in (("train", m_train), ("val", m_val), ("test", m_test)):
        sets, labels = _draw(spec, motifs, rng, m)
        out.append(Dataset(sets, labels, num_classes=spec.classes, split=split))
    return tuple(out)
