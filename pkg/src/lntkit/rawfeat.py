"""Unsupervised raw features: a channel-wise Saab cascade plus HOG.

Each hop convolves local patches with a data-driven basis (a constant DC
filter plus PCA filters of the DC-removed patches) and downsamples with
absolute max-pooling. Multi-channel images run one independent cascade per
input channel; only the last hop's coefficients become features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import Dataset
from .errors import ConfigError, ConsistencyError, InvalidInputError

FEATURES_MAGIC = b"FMX1"
HOG_EPS = 1e-12


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows by sample columns, with one name per row."""

    values: np.ndarray  # (N, L) float64
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ConsistencyError(f"values must be 2-D, got shape {self.values.shape}")
        n, ell = self.values.shape
        if n < 1 or ell < 1:
            raise ConsistencyError(f"need at least one feature and one sample, got {n}x{ell}")
        if len(self.feature_names) != n:
            raise ConsistencyError(
                f"{n} feature rows but {len(self.feature_names)} names"
            )
        if not np.isfinite(self.values).all():
            raise ConsistencyError("feature values contain NaN/Inf")

    @property
    def feature_count(self) -> int:
        return self.values.shape[0]

    @property
    def sample_count(self) -> int:
        return self.values.shape[1]

    def rows(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(
            values=self.values[indices].copy(),
            feature_names=tuple(self.feature_names[i] for i in indices),
        )

    def columns(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(
            values=self.values[:, indices].copy(),
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class HopSpec:
    """One cascade stage: patch side, total kept channels, pooling stride."""

    patch_size: int
    kept_channels: int
    pool: int = 1  # abs-max-pool window and stride after the hop; 1 = none


@dataclass(frozen=True)
class HopConfig:
    hops: tuple[HopSpec, ...]

    def __post_init__(self):
        if not self.hops:
            raise ConfigError("need at least one hop")
        for hop in self.hops:
            if hop.patch_size < 1 or hop.kept_channels < 1 or hop.pool < 1:
                raise ConfigError(f"invalid hop spec {hop}")

    @classmethod
    def parse(cls, text: str) -> "HopConfig":
        """Parse 'patch:channels:pool' triples separated by commas."""
        hops = []
        for part in text.split(","):
            fields = part.strip().split(":")
            if len(fields) != 3:
                raise ConfigError(f"bad hop spec {part!r}, want patch:channels:pool")
            hops.append(HopSpec(int(fields[0]), int(fields[1]), int(fields[2])))
        return cls(hops=tuple(hops))

    def format(self) -> str:
        return ",".join(f"{h.patch_size}:{h.kept_channels}:{h.pool}" for h in self.hops)


@dataclass(frozen=True)
class SaabKernel:
    """Filters for one input channel of one hop.

    dc_filter is the unit-norm constant vector; ac_filters holds orthonormal
    principal directions of the DC-removed patches (rows, descending
    eigenvalue); ac_mean is the fitting-set mean of the DC-removed patches.
    """

    patch_size: int
    dc_filter: np.ndarray  # (d,)
    ac_filters: np.ndarray  # (kept - 1, d)
    ac_mean: np.ndarray  # (d,)
    ac_eigenvalues: np.ndarray  # (kept - 1,) descending

    @property
    def kept_channels(self) -> int:
        return 1 + self.ac_filters.shape[0]


@dataclass(frozen=True)
class SaabModel:
    """Fitted cascade kernels: [cascade][hop][input unit] -> kernel or None."""

    config: HopConfig
    cascades: tuple[tuple[tuple[SaabKernel | None, ...], ...], ...]
    input_shape: tuple[int, int, int]  # (H, W, C) the model was fitted for


def _distribute(total: int, caps: Sequence[int]) -> list[int]:
    """Split `total` across units as evenly as caps allow, earlier units first."""
    parts = len(caps)
    if total > sum(caps):
        raise ConfigError(
            f"kept_channels {total} exceeds capacity {sum(caps)} for this hop"
        )
    q, r = divmod(total, parts)
    counts = [q + 1 if i < r else q for i in range(parts)]
    for i in range(parts):
        if counts[i] > caps[i]:
            overflow = counts[i] - caps[i]
            counts[i] = caps[i]
            for j in range(parts):
                if j == i or overflow == 0:
                    continue
                take = min(caps[j] - counts[j], overflow)
                counts[j] += take
                overflow -= take
    return counts


def _complement_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to unit vector w."""
    d = w.size
    e0 = np.zeros(d)
    e0[0] = 1.0
    v = e0 - w
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return np.eye(d)[:, 1:]
    v /= norm
    house = np.eye(d) - 2.0 * np.outer(v, v)
    return house[:, 1:]


def _patch_matrix(channel: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W) maps -> (B, oh, ow, patch*patch) patch vectors (a view-copy)."""
    win = sliding_window_view(channel, (patch, patch), axis=(1, 2))
    b, oh, ow = win.shape[:3]
    return win.reshape(b, oh, ow, patch * patch)


def _fit_unit(channel: np.ndarray, patch: int, kept: int, batch: int) -> SaabKernel:
    """PCA of DC-removed patches of one channel, accumulated in batches."""
    d = patch * patch
    if kept > d:
        raise ConfigError(f"kept_channels {kept} exceeds patch dimension {d}")
    b = channel.shape[0]
    count = 0
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    for start in range(0, b, batch):
        p = _patch_matrix(channel[start:start + batch], patch).reshape(-1, d)
        q = p - p.mean(axis=1, keepdims=True)
        count += q.shape[0]
        s1 += q.sum(axis=0)
        s2 += q.T @ q
    if count < d:
        raise ConfigError(f"only {count} patches for dimension {d}; need more data")
    mean = s1 / count
    cov = (s2 - count * np.outer(mean, mean)) / max(count - 1, 1)

    w = np.full(d, 1.0 / np.sqrt(d))
    basis = _complement_basis(w)
    reduced = basis.T @ cov @ basis
    eigvals, eigvecs = np.linalg.eigh(reduced)
    order = np.argsort(eigvals)[::-1][: kept - 1]
    filters = (basis @ eigvecs[:, order]).T  # (kept-1, d), exactly orthogonal to w
    for row in filters:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return SaabKernel(
        patch_size=patch,
        dc_filter=w,
        ac_filters=filters,
        ac_mean=mean,
        ac_eigenvalues=np.clip(eigvals[order], 0.0, None),
    )


def abs_max_pool(maps: np.ndarray, size: int) -> np.ndarray:
    """Keep the largest-magnitude value (sign preserved) in each window.

    maps is (B, H, W, C); windows are size x size with stride size, trailing
    rows/columns that do not fill a window are dropped.
    """
    if size == 1:
        return maps
    b, h, w, c = maps.shape
    nh, nw = h // size, w // size
    if nh == 0 or nw == 0:
        raise ConfigError(f"pooling window {size} larger than grid {h}x{w}")
    x = maps[:, : nh * size, : nw * size, :]
    x = x.reshape(b, nh, size, nw, size, c).transpose(0, 1, 3, 5, 2, 4)
    x = x.reshape(b, nh, nw, c, size * size)
    idx = np.abs(x).argmax(axis=-1)
    return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]


def _unit_coefficients(channel: np.ndarray, kern: SaabKernel) -> np.ndarray:
    """(B, H, W) -> (B, oh, ow, kept) DC plus AC coefficients."""
    p = _patch_matrix(channel, kern.patch_size)
    dc = p @ kern.dc_filter
    out = [dc[..., None]]
    if kern.ac_filters.shape[0]:
        q = p - dc[..., None] * kern.dc_filter
        out.append((q - kern.ac_mean) @ kern.ac_filters.T)
    return np.concatenate(out, axis=-1)


def _hop_apply(maps: np.ndarray, kernels: Sequence[SaabKernel | None],
               pool: int, batch: int) -> np.ndarray:
    b, h, w, c_in = maps.shape
    if len(kernels) != c_in:
        raise ConsistencyError(f"{len(kernels)} kernels for {c_in} input channels")
    patch = next(k.patch_size for k in kernels if k is not None)
    if patch > h or patch > w:
        raise ConfigError(f"patch {patch} does not fit the {h}x{w} grid")
    oh, ow = h - patch + 1, w - patch + 1
    c_out = sum(k.kept_channels for k in kernels if k is not None)
    ph, pw = (oh // pool, ow // pool) if pool > 1 else (oh, ow)
    if ph == 0 or pw == 0:
        raise ConfigError(f"pooling window {pool} larger than grid {oh}x{ow}")
    out = np.empty((b, ph, pw, c_out))
    for start in range(0, b, batch):
        stop = min(start + batch, b)
        pieces = [
            _unit_coefficients(maps[start:stop, :, :, u], kern)
            for u, kern in enumerate(kernels)
            if kern is not None
        ]
        stage = np.concatenate(pieces, axis=-1)
        out[start:stop] = abs_max_pool(stage, pool) if pool > 1 else stage
    return out


def fit_saab(dataset: Dataset, config: HopConfig, batch: int = 512) -> SaabModel:
    """Fit the cascade kernels hop by hop, channel-wise past the first hop.

    The per-hop kept_channels budget is split across the per-input-channel
    units as evenly as patch capacity allows, earlier (higher-energy)
    channels first.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot fit on an empty dataset")
    n_casc = dataset.channels
    maps = [dataset.pixels[..., c:c + 1].astype(np.float64) for c in range(n_casc)]
    cascades: list[list[tuple[SaabKernel | None, ...]]] = [[] for _ in range(n_casc)]
    for hop in config.hops:
        area = hop.patch_size * hop.patch_size
        caps = [m.shape[-1] * area for m in maps]
        totals = _distribute(hop.kept_channels, caps)
        for ci in range(n_casc):
            c_in = maps[ci].shape[-1]
            unit_counts = _distribute(totals[ci], [area] * c_in)
            kernels = tuple(
                _fit_unit(maps[ci][..., u], hop.patch_size, kept, batch)
                if kept > 0 else None
                for u, kept in enumerate(unit_counts)
            )
            cascades[ci].append(kernels)
            maps[ci] = _hop_apply(maps[ci], kernels, hop.pool, batch)
    return SaabModel(
        config=config,
        cascades=tuple(tuple(hops) for hops in cascades),
        input_shape=dataset.image_shape,
    )


def apply_saab(dataset: Dataset, model: SaabModel, batch: int = 512) -> FeatureMatrix:
    """Run the fitted cascade; the last hop's coefficients become features."""
    if dataset.image_shape != model.input_shape:
        raise ConsistencyError(
            f"dataset shape {dataset.image_shape} differs from fitted {model.input_shape}"
        )
    blocks = []
    names: list[str] = []
    n_hops = len(model.config.hops)
    for ci, hop_kernels in enumerate(model.cascades):
        maps = dataset.pixels[..., ci:ci + 1].astype(np.float64)
        for hop, kernels in zip(model.config.hops, hop_kernels):
            maps = _hop_apply(maps, kernels, hop.pool, batch)
        b, oh, ow, c = maps.shape
        blocks.append(maps.reshape(b, oh * ow * c))
        names.extend(
            f"saab_c{ci}_h{n_hops}_y{y}_x{x}_k{k}"
            for y in range(oh) for x in range(ow) for k in range(c)
        )
    values = np.concatenate(blocks, axis=1).T
    return FeatureMatrix(values=values, feature_names=tuple(names))


def hog_features(dataset: Dataset, cell: int = 8, bins: int = 9,
                 batch: int = 2048) -> FeatureMatrix:
    """Cell histograms of unsigned gradient orientations, block-normalized.

    Uses the first channel (the luma plane for YUV input). Blocks span 2x2
    cells with stride one cell and are L2-normalized with a zero guard, so a
    constant image yields an all-zero descriptor.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot extract HOG from an empty dataset")
    imgs = dataset.pixels[..., 0].astype(np.float64)
    b, h, w = imgs.shape
    if cell < 1 or cell > min(h, w):
        raise ConfigError(f"cell {cell} does not fit a {h}x{w} image")
    nch, ncw = h // cell, w // cell
    bin_width = np.pi / bins

    hist = np.zeros((b, nch, ncw, bins))
    for start in range(0, b, batch):
        stop = min(start + batch, b)
        gy, gx = np.gradient(imgs[start:stop], axis=(1, 2))
        mag = np.hypot(gx, gy)
        ang = np.mod(np.arctan2(gy, gx), np.pi)
        idx = np.minimum((ang / bin_width).astype(np.int64), bins - 1)
        crop_m = mag[:, : nch * cell, : ncw * cell]
        crop_i = idx[:, : nch * cell, : ncw * cell]
        for k in range(bins):
            masked = np.where(crop_i == k, crop_m, 0.0)
            hist[start:stop, :, :, k] = (
                masked.reshape(stop - start, nch, cell, ncw, cell).sum(axis=(2, 4))
            )

    bh, bw = min(2, nch), min(2, ncw)
    nbh, nbw = nch - bh + 1, ncw - bw + 1
    feats = np.empty((b, nbh, nbw, bh * bw * bins))
    for by in range(nbh):
        for bx in range(nbw):
            block = hist[:, by:by + bh, bx:bx + bw, :].reshape(b, -1)
            norm = np.sqrt((block * block).sum(axis=1) + HOG_EPS * HOG_EPS)
            feats[:, by, bx, :] = block / norm[:, None]
    names = tuple(
        f"hog_y{by}_x{bx}_o{k}"
        for by in range(nbh) for bx in range(nbw) for k in range(bh * bw * bins)
    )
    return FeatureMatrix(values=feats.reshape(b, -1).T, feature_names=names)


def concat_features(parts: Sequence[FeatureMatrix],
                    prefixes: Sequence[str] | None = None) -> FeatureMatrix:
    """Stack feature rows of several matrices over the same samples."""
    if not parts:
        raise InvalidInputError("need at least one feature matrix")
    ell = parts[0].sample_count
    for part in parts:
        if part.sample_count != ell:
            raise ConsistencyError(
                f"sample counts differ: {part.sample_count} vs {ell}"
            )
    if prefixes is not None and len(prefixes) != len(parts):
        raise InvalidInputError("need one prefix per part")
    names: list[str] = []
    for i, part in enumerate(parts):
        if prefixes is None:
            names.extend(part.feature_names)
        else:
            names.extend(f"{prefixes[i]}:{n}" for n in part.feature_names)
    if len(set(names)) != len(names):
        raise ConsistencyError("duplicate feature names; pass distinct prefixes")
    values = np.concatenate([p.values for p in parts], axis=0)
    return FeatureMatrix(values=values, feature_names=tuple(names))


def save_features(features: FeatureMatrix, path) -> None:
    """Binary layout: magic, N, L, row-major float32 values, names block."""
    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        f.write(struct.pack("<QQ", features.feature_count, features.sample_count))
        f.write(np.ascontiguousarray(features.values, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(features.feature_names)))
        for name in features.feature_names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURES_MAGIC:
        raise ConsistencyError(f"{path}: not a feature matrix file")
    n, ell = struct.unpack_from("<QQ", raw, 4)
    offset = 4 + 16
    values = np.frombuffer(raw, dtype="<f4", count=n * ell, offset=offset)
    values = values.reshape(n, ell).astype(np.float64)
    offset += 4 * n * ell
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        names.append(raw[offset:offset + length].decode("utf-8"))
        offset += length
    return FeatureMatrix(values=values, feature_names=tuple(names))


def export_features_csv(features: FeatureMatrix, path) -> None:
    with open(path, "w") as f:
        f.write("feature," + ",".join(f"s{i}" for i in range(features.sample_count)) + "\n")
        for name, row in zip(features.feature_names, features.values):
            f.write(name + "," + ",".join("%.9g" % v for v in row) + "\n")
