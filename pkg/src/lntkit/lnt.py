"""Least-squares normal transform: fit, apply, and SVD low-rank reduction.

The transform maps a raw feature vector x to p = A x, where each row of A
solves a regularized least-squares regression from the features to one
binary super-class target. Inputs are mean-centered before solving, which
makes the bias exactly the residual between target and feature means; the
bias is stored but never added when generating features, since a constant
shift carries no discriminant information.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConsistencyError, InvalidInputError, SingularityError

MODEL_MAGIC = b"LNTM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LntModel:
    """Fitted transform: weights (M, N), per-row bias, and the input center."""

    weights: np.ndarray  # (M, N) float64
    bias: np.ndarray  # (M,) float64
    center: np.ndarray  # (N,) float64, subtracted from inputs before A x
    ridge: float

    def __post_init__(self):
        if not np.isfinite(self.weights).all():
            raise ConsistencyError("weights contain NaN/Inf")
        if self.bias.shape != (self.weights.shape[0],):
            raise ConsistencyError("bias length must equal output_dim")
        if self.center.shape != (self.weights.shape[1],):
            raise ConsistencyError("center length must equal input_dim")

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    def row_subset(self, indices) -> "LntModel":
        """Model keeping only the given output rows (the deployed filters)."""
        indices = np.asarray(indices, dtype=np.int64)
        return LntModel(
            weights=self.weights[indices].copy(),
            bias=self.bias[indices].copy(),
            center=self.center.copy(),
            ridge=self.ridge,
        )


@dataclass(frozen=True)
class LowRankFactors:
    """Truncated SVD factors of the transposed weight matrix."""

    u_k: np.ndarray  # (N, K), orthonormal columns
    sigma_k: np.ndarray  # (K,), descending
    v_k: np.ndarray  # (M, K), orthonormal columns
    rank: int

    def reconstruct(self) -> np.ndarray:
        """The rank-K approximation of the original (M, N) weight matrix."""
        return (self.v_k * self.sigma_k) @ self.u_k.T


@dataclass(frozen=True)
class ComplementaryFeatures:
    """Generated features, one row per transform filter."""

    values: np.ndarray  # (K, L)
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(self.provenance) != self.values.shape[0]:
            raise ConsistencyError("one provenance entry per generated row required")

    def row_count(self) -> int:
        return self.values.shape[0]


def _as_matrix(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=np.float64)


def fit_lnt(x, t, ridge: float | None = None, center: bool = True) -> LntModel:
    """Solve (Xc Xc^T + ridge I) A^T = Xc Tc^T for all target rows at once.

    x: (N, L) feature matrix (or FeatureMatrix); t: (M, L) binary targets
    (or TargetMatrix). ridge=None applies the scale-aware default; ridge=0
    solves the plain normal equations and raises SingularityError when the
    Gram factorization fails. With center=False the raw (uncentered) normal
    equations are solved and the stored center is zero.
    """
    x = _as_matrix(x)
    t = _as_matrix(t)
    if x.ndim != 2 or t.ndim != 2:
        raise ConsistencyError("x and t must be 2-D")
    if x.shape[1] != t.shape[1]:
        raise ConsistencyError(
            f"x has {x.shape[1]} samples but t has {t.shape[1]}"
        )
    n, ell = x.shape
    if ell == 0:
        raise InvalidInputError("cannot fit on zero samples")

    x_mean = x.mean(axis=1) if center else np.zeros(n)
    t_mean = t.mean(axis=1) if center else np.zeros(t.shape[0])
    xc = x - x_mean[:, None]
    tc = t - t_mean[:, None]

    gram = xc @ xc.T
    if ridge is None:
        ridge = 1e-6 * float(np.trace(gram)) / n
    if ridge < 0:
        raise InvalidInputError(f"ridge must be >= 0, got {ridge}")
    if ridge > 0:
        gram = gram + ridge * np.eye(n)

    rhs = xc @ tc.T  # (N, M)
    try:
        cho = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        at = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        if ridge == 0:
            raise SingularityError(
                "Gram matrix is numerically singular; refit with a positive ridge"
            ) from exc
        # Regularized Gram that still fails to factor: least-squares fallback.
        at = np.linalg.pinv(gram) @ rhs
    weights = at.T
    if not np.isfinite(weights).all():
        raise SingularityError(
            "solve produced non-finite weights; refit with a positive ridge"
        )

    bias = t_mean - weights @ x_mean
    return LntModel(weights=weights, bias=bias, center=x_mean, ridge=float(ridge))


def apply_lnt(model: LntModel, x, name_prefix: str = "lnt") -> ComplementaryFeatures:
    """Generate complementary features p = A (x - center) per sample column.

    The bias is deliberately not added: it would shift every generated
    feature by a constant, which changes nothing downstream.
    """
    x = _as_matrix(x)
    if x.shape[0] != model.input_dim:
        raise ConsistencyError(
            f"input has {x.shape[0]} features, model expects {model.input_dim}"
        )
    values = model.weights @ (x - model.center[:, None])
    width = len(str(max(model.output_dim - 1, 1)))
    provenance = tuple(f"{name_prefix}_{i:0{width}d}" for i in range(model.output_dim))
    return ComplementaryFeatures(values=values, provenance=provenance)


def svd_low_rank(model: LntModel, rank: int) -> tuple[LowRankFactors, LntModel]:
    """Truncated SVD of A^T, plus the reduced K-filter model Sigma_k U_k^T.

    The reduced model's K rows span the dominant row space of A, so each
    filter blends every original target row; downstream feature count drops
    from M to K at the same per-sample cost ratio.
    """
    m, n = model.weights.shape
    if not 1 <= rank <= min(m, n):
        raise InvalidInputError(f"rank must be in [1, {min(m, n)}], got {rank}")
    u, sigma, vt = np.linalg.svd(model.weights.T, full_matrices=False)
    factors = LowRankFactors(
        u_k=u[:, :rank].copy(),
        sigma_k=sigma[:rank].copy(),
        v_k=vt[:rank, :].T.copy(),
        rank=rank,
    )
    reduced = LntModel(
        weights=factors.sigma_k[:, None] * factors.u_k.T,
        bias=factors.v_k.T @ model.bias,
        center=model.center.copy(),
        ridge=model.ridge,
    )
    return factors, reduced


def feature_gen_param_count(model: LntModel) -> int:
    """Stored weight entries of the deployed transform (bias unused)."""
    return model.output_dim * model.input_dim


def feature_gen_flops(model: LntModel, fraction_routed: float = 1.0) -> float:
    """Average per-sample FLOPs: fraction * 2 * M * N (multiply-add = 2)."""
    if not 0.0 <= fraction_routed <= 1.0:
        raise InvalidInputError(f"fraction_routed must be in [0, 1], got {fraction_routed}")
    return fraction_routed * 2.0 * model.output_dim * model.input_dim


def save_lnt(model: LntModel, path) -> None:
    """Binary layout: magic, version, M, N, ridge, flags, center, bias, weights."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IQQdI", MODEL_VERSION, model.output_dim, model.input_dim,
                            model.ridge, 0))
        f.write(model.center.astype("<f8").tobytes())
        f.write(model.bias.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_lnt(path) -> LntModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ConsistencyError(f"{path}: not a transform model file")
    version, m, n, ridge, _flags = struct.unpack_from("<IQQdI", raw, 4)
    if version != MODEL_VERSION:
        raise ConsistencyError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<IQQdI")
    center = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
    offset += 8 * n
    bias = np.frombuffer(raw, dtype="<f8", count=m, offset=offset).copy()
    offset += 8 * m
    weights = np.frombuffer(raw, dtype="<f8", count=m * n, offset=offset).reshape(m, n).copy()
    return LntModel(weights=weights, bias=bias, center=center, ridge=ridge)


def export_lnt_csv(model: LntModel, path) -> None:
    """Weights as CSV, one row per filter; bias and center in the header."""
    with open(path, "w") as f:
        f.write("# ridge=%.17g\n" % model.ridge)
        f.write("# bias=" + ",".join("%.17g" % b for b in model.bias) + "\n")
        f.write("# center=" + ",".join("%.17g" % c for c in model.center) + "\n")
        for row in model.weights:
            f.write(",".join("%.17g" % w for w in row) + "\n")
