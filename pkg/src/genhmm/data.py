"""Sequence datasets: file I/O, synthetic generation, standardization,
and SNR-controlled noise perturbation.

The on-disk format is line-delimited UTF-8 text, one sequence per line:

    <label> TAB <n_frames> TAB <n_dim> TAB <values row-major, space-separated>

Values are written with 17 significant digits so a save/load round trip
is bit-exact.  Files ending in ``.gz`` are transparently compressed.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError",
    "SequenceDataset",
    "Standardizer",
    "load_dataset",
    "save_dataset",
    "make_synthetic",
    "add_noise",
    "measured_snr_db",
]

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed dataset file or inconsistent sequence shapes."""


@dataclass
class SequenceDataset:
    """Labeled variable-length sequences of fixed-width frames."""

    items: list  # of (label: str, frames: (T, N) float array)

    def __post_init__(self):
        if not self.items:
            raise DataError("dataset is empty")
        widths = {frames.shape[1] for _, frames in self.items}
        if len(widths) != 1:
            raise DataError(f"sequences disagree on frame width: {sorted(widths)}")
        for label, frames in self.items:
            if frames.shape[0] < 1:
                raise DataError(f"empty sequence with label {label!r}")
            if not np.all(np.isfinite(frames)):
                raise DataError(f"non-finite frames in a {label!r} sequence")

    @property
    def n_dim(self):
        return self.items[0][1].shape[1]

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def labels(self):
        """Sorted class vocabulary."""
        return sorted({label for label, _ in self.items})

    def by_class(self):
        """Mapping label -> list of frame arrays, in dataset order."""
        out = {label: [] for label in self.labels}
        for label, frames in self.items:
            out[label].append(frames)
        return out

    def map_frames(self, fn):
        """New dataset with ``fn`` applied to every frame array."""
        return SequenceDataset(
            [(label, np.asarray(fn(frames), dtype=np.float64))
             for label, frames in self.items])


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def load_dataset(path):
    """Parse a dataset file, validating shapes line by line."""
    items = []
    n_dim = None
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated "
                                f"fields, got {len(parts)}")
            label, t_str, n_str, values = parts
            try:
                n_frames, width = int(t_str), int(n_str)
                flat = np.array(values.split(), dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if n_frames < 1 or width < 1:
                raise DataError(f"{path}:{lineno}: non-positive shape "
                                f"({n_frames}, {width})")
            if flat.size != n_frames * width:
                raise DataError(f"{path}:{lineno}: expected {n_frames * width} "
                                f"values, got {flat.size}")
            if n_dim is None:
                n_dim = width
            elif width != n_dim:
                raise DataError(f"{path}:{lineno}: frame width {width} != "
                                f"{n_dim} seen earlier")
            items.append((label, flat.reshape(n_frames, width)))
    if not items:
        raise DataError(f"{path}: no sequences found")
    return SequenceDataset(items)


def save_dataset(ds, path):
    """Write a dataset in the line format; values round-trip exactly."""
    with _open_text(path, "w") as fh:
        for label, frames in ds:
            if "\t" in label or "\n" in label:
                raise DataError(f"label {label!r} contains a separator")
            values = " ".join(f"{v:.17g}" for v in frames.ravel())
            fh.write(f"{label}\t{frames.shape[0]}\t{frames.shape[1]}\t{values}\n")


def make_synthetic(models, n_per_class, length_range, seed):
    """Sample a labeled dataset from ground-truth models.

    Each model must expose ``label`` and ``sample(n_frames, rng)``.
    Lengths are drawn uniformly from ``length_range`` (inclusive).  The
    result is a deterministic function of ``seed``.
    """
    if not models:
        raise DataError("need at least one ground-truth model")
    lo, hi = int(length_range[0]), int(length_range[1])
    if lo < 1 or hi < lo:
        raise DataError(f"bad length range ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    items = []
    for model in models:
        for _ in range(int(n_per_class)):
            n_frames = int(rng.integers(lo, hi + 1))
            items.append((model.label, model.sample(n_frames, rng)))
    return SequenceDataset(items)


def _pink_shaped(white):
    """Shape white noise to a 1/f amplitude spectrum along axis 0."""
    n_frames = white.shape[0]
    spectrum = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n_frames)
    gain = np.zeros_like(freqs)
    gain[1:] = 1.0 / np.sqrt(freqs[1:])
    spectrum *= gain[:, None]
    return np.fft.irfft(spectrum, n=n_frames, axis=0)


def add_noise(ds, kind, snr_db, seed):
    """Perturb every sequence at an exact per-sequence SNR.

    ``kind`` is ``white`` (i.i.d. Gaussian) or ``pink`` (1/f-shaped
    along time, per coordinate).  Noise is rescaled so that
    ``10 log10(signal power / noise power)`` equals ``snr_db`` for each
    sequence; zero-power sequences are left unmodified with a warning.
    """
    if kind not in ("white", "pink"):
        raise DataError(f"unknown noise kind {kind!r}")
    if not np.isfinite(snr_db):
        raise DataError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    items = []
    for label, frames in ds:
        noise = rng.standard_normal(frames.shape)
        # 1/f shaping needs at least two frames to have any spectrum to shape
        if kind == "pink" and frames.shape[0] >= 2:
            noise = _pink_shaped(noise)
        signal_power = float(np.mean(frames * frames))
        noise_power = float(np.mean(noise * noise))
        if signal_power == 0.0 or noise_power == 0.0:
            logger.warning("zero-power sequence (label %r) left unperturbed", label)
            items.append((label, frames.copy()))
            continue
        target_noise_power = signal_power / 10.0 ** (snr_db / 10.0)
        noise *= np.sqrt(target_noise_power / noise_power)
        items.append((label, frames + noise))
    return SequenceDataset(items)


def measured_snr_db(clean, noisy):
    """Post-hoc SNR of one perturbed sequence, in dB."""
    signal_power = float(np.mean(clean * clean))
    noise = noisy - clean
    noise_power = float(np.mean(noise * noise))
    return 10.0 * np.log10(signal_power / noise_power)


@dataclass
class Standardizer:
    """Per-dimension affine transform fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, ds):
        frames = np.concatenate([f for _, f in ds], axis=0)
        std = np.maximum(frames.std(axis=0), STD_FLOOR)
        return cls(mean=frames.mean(axis=0), std=std)

    def apply(self, ds):
        if ds.n_dim != self.mean.shape[0]:
            raise DataError(f"standardizer is {self.mean.shape[0]}-dimensional, "
                            f"dataset is {ds.n_dim}-dimensional")
        return ds.map_frames(lambda f: (f - self.mean) / self.std)

    def invert(self, ds):
        if ds.n_dim != self.mean.shape[0]:
            raise DataError("dimension mismatch")
        return ds.map_frames(lambda f: f * self.std + self.mean)
