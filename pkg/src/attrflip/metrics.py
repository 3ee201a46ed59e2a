"""Evaluation metrics: feature-norm ratio statistics and Fréchet distance.

Both metrics run on top of a pluggable feature extractor. The norm-ratio
metric (DFN) compares per-image embedding magnitudes of originals and their
translations; FID fits Gaussians to the two feature clouds, optionally after
a shared PCA reduction fitted on the union of both sets.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import MetricError, ShapeError

__all__ = [
    "FeatureExtractor",
    "flatten_extractor",
    "discriminator_embedding_extractor",
    "DFNReport",
    "compute_dfn",
    "PCABasis",
    "pca_reduce",
    "FIDReport",
    "compute_fid",
    "evaluate_pair",
    "summary_record",
]


class FeatureExtractor:
    """Deterministic callable mapping an image batch to an (n, dim) feature matrix."""

    def __init__(self, name: str, fn: Callable[[np.ndarray], np.ndarray], output_dim: int | None = None):
        self.name = name
        self.output_dim = output_dim
        self._fn = fn

    def __call__(self, images) -> np.ndarray:
        feats = np.asarray(self._fn(np.asarray(images, dtype=np.float32)), dtype=np.float64)
        if feats.ndim != 2:
            raise ShapeError(f"extractor {self.name!r} returned shape {feats.shape}, expected 2-D")
        if self.output_dim is None:
            self.output_dim = feats.shape[1]
        elif feats.shape[1] != self.output_dim:
            raise ShapeError(
                f"extractor {self.name!r} emitted {feats.shape[1]} dims, expected {self.output_dim}"
            )
        return feats


def flatten_extractor() -> FeatureExtractor:
    """Stub extractor: the flattened image itself is the feature vector."""
    return FeatureExtractor("stub", lambda imgs: imgs.reshape(imgs.shape[0], -1))


def discriminator_embedding_extractor(discriminator) -> FeatureExtractor:
    """Use a trained discriminator's pooled trunk activations as a toy embedder."""
    import torch

    def fn(images: np.ndarray) -> np.ndarray:
        discriminator.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(images), 64):
                x = torch.from_numpy(images[start : start + 64]).permute(0, 3, 1, 2)
                out.append(discriminator(x).features[-1].mean(dim=(2, 3)).numpy())
        return np.concatenate(out, axis=0)

    channels = discriminator.config.trunk_channels()[-1]
    return FeatureExtractor("disc", fn, output_dim=channels)


@dataclass
class DFNReport:
    """Per-image embedding-norm ratios with quartile statistics."""

    ratios: list[tuple[str, float]]
    mean: float
    q25: float
    q50: float
    q75: float
    iqr: float


def compute_dfn(
    real_features: np.ndarray,
    gen_features: np.ndarray,
    ids: Sequence[str] | None = None,
) -> DFNReport:
    """Row-wise ratio of generated to real feature norms, with quartiles.

    Rows must be aligned (row i of both matrices describes the same source
    image). Quartiles use linear interpolation between order statistics.
    """
    real = np.asarray(real_features, dtype=np.float64)
    gen = np.asarray(gen_features, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2:
        raise ShapeError(f"feature matrices must be 2-D, got {real.shape} and {gen.shape}")
    if real.shape != gen.shape:
        raise ShapeError(f"feature matrices differ in shape: {real.shape} != {gen.shape}")
    if real.shape[0] == 0:
        raise ShapeError("feature matrices are empty")
    if ids is None:
        ids = [str(i) for i in range(real.shape[0])]
    elif len(ids) != real.shape[0]:
        raise ShapeError(f"{len(ids)} ids do not match {real.shape[0]} feature rows")

    real_norms = np.linalg.norm(real, axis=1)
    gen_norms = np.linalg.norm(gen, axis=1)
    for side, norms in (("real", real_norms), ("generated", gen_norms)):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise MetricError(f"zero-norm {side} feature row for image {ids[zero[0]]}")

    gamma = gen_norms / real_norms
    q25, q50, q75 = (float(q) for q in np.percentile(gamma, [25, 50, 75], method="linear"))
    return DFNReport(
        ratios=[(str(i), float(g)) for i, g in zip(ids, gamma)],
        mean=float(gamma.mean()),
        q25=q25,
        q50=q50,
        q75=q75,
        iqr=q75 - q25,
    )


@dataclass
class PCABasis:
    """Fitted reduction: center, then project onto the leading eigenvectors."""

    mean: np.ndarray
    components: np.ndarray  # (k, d), rows ordered by descending explained variance
    explained_variance: np.ndarray
    clipped: bool  # true when the requested k exceeded min(n - 1, d)

    def transform(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.mean.shape[0]:
            raise ShapeError(f"cannot project shape {feats.shape} with a {self.mean.shape[0]}-dim basis")
        return (feats - self.mean) @ self.components.T


def pca_reduce(features: np.ndarray, k: int = 1024) -> tuple[np.ndarray, PCABasis]:
    """Project onto the top-k principal directions of the sample covariance.

    k is clipped to min(n - 1, d) when the sample cannot support it; the
    basis records the clip and can re-project further feature sets.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {feats.shape}")
    n, d = feats.shape
    if n < 2:
        raise MetricError(f"PCA needs at least 2 rows, got {n}")
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    k_eff = min(k, n - 1, d)
    mean = feats.mean(axis=0)
    centered = feats - mean
    # SVD of the centered data yields the covariance eigenvectors directly
    _, singulars, vt = np.linalg.svd(centered, full_matrices=False)
    basis = PCABasis(
        mean=mean,
        components=vt[:k_eff],
        explained_variance=singulars[:k_eff] ** 2 / (n - 1),
        clipped=k_eff < k,
    )
    return centered @ basis.components.T, basis


@dataclass
class FIDReport:
    value: float
    n_real: int
    n_gen: int
    feature_dim_raw: int
    feature_dim_reduced: int
    epsilon_regularizer: float
    small_sample_warning: bool  # set when a sample is not larger than the feature dim


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def compute_fid(real_features: np.ndarray, gen_features: np.ndarray, epsilon: float = 1e-6) -> FIDReport:
    """Fréchet distance between Gaussian fits of two feature samples.

    Sample means and unbiased covariances; epsilon * I is added to both
    covariances, and the cross term is evaluated as
    Tr((S_g^1/2 S_x S_g^1/2)^1/2) through symmetric eigendecompositions with
    negative eigenvalues clamped to zero, so the result is real by construction.
    """
    real = np.asarray(real_features, dtype=np.float64)
    gen = np.asarray(gen_features, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2:
        raise ShapeError(f"feature matrices must be 2-D, got {real.shape} and {gen.shape}")
    if real.shape[1] != gen.shape[1]:
        raise ShapeError(f"feature dims differ: {real.shape[1]} != {gen.shape[1]}")
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise MetricError("each feature matrix needs at least 2 rows")

    d = real.shape[1]
    mu_x, mu_g = real.mean(axis=0), gen.mean(axis=0)
    cov_x = np.atleast_2d(np.cov(real, rowvar=False)) + epsilon * np.eye(d)
    cov_g = np.atleast_2d(np.cov(gen, rowvar=False)) + epsilon * np.eye(d)

    sqrt_g = _sqrtm_psd(cov_g)
    inner = sqrt_g @ cov_x @ sqrt_g
    cross_vals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0, None)
    value = (
        float(((mu_x - mu_g) ** 2).sum())
        + float(np.trace(cov_x) + np.trace(cov_g))
        - 2 * float(np.sqrt(cross_vals).sum())
    )
    return FIDReport(
        value=value,
        n_real=real.shape[0],
        n_gen=gen.shape[0],
        feature_dim_raw=d,
        feature_dim_reduced=d,
        epsilon_regularizer=epsilon,
        small_sample_warning=not (real.shape[0] > d and gen.shape[0] > d),
    )


def evaluate_pair(
    real_images,
    gen_images,
    extractor: FeatureExtractor,
    reduce_to: int | None = None,
    ids: Sequence[str] | None = None,
    epsilon: float = 1e-6,
) -> tuple[DFNReport, FIDReport]:
    """Run both metrics over aligned real/generated image lists.

    DFN uses the raw extractor features; FID optionally reduces them with a
    PCA basis fitted on the concatenation of both feature sets.
    """
    real_images = np.asarray(real_images, dtype=np.float32)
    gen_images = np.asarray(gen_images, dtype=np.float32)
    if len(real_images) != len(gen_images):
        raise ShapeError(f"{len(real_images)} real vs {len(gen_images)} generated images")
    feats_real = extractor(real_images)
    feats_gen = extractor(gen_images)
    dfn = compute_dfn(feats_real, feats_gen, ids=ids)

    raw_dim = feats_real.shape[1]
    if reduce_to is not None:
        _, basis = pca_reduce(np.concatenate([feats_real, feats_gen], axis=0), k=reduce_to)
        feats_real = basis.transform(feats_real)
        feats_gen = basis.transform(feats_gen)
    fid = compute_fid(feats_real, feats_gen, epsilon=epsilon)
    fid = dataclasses.replace(fid, feature_dim_raw=raw_dim)
    return dfn, fid


def summary_record(attribute: str, dfn: DFNReport, fid: FIDReport) -> dict:
    """Machine-readable record of one evaluation, suitable for table assembly."""
    return {
        "attribute": attribute,
        "n": len(dfn.ratios),
        "fid": fid.value,
        "dfn_mean": dfn.mean,
        "dfn_q25": dfn.q25,
        "dfn_q50": dfn.q50,
        "dfn_q75": dfn.q75,
        "dfn_iqr": dfn.iqr,
        "feature_dim_raw": fid.feature_dim_raw,
        "feature_dim_reduced": fid.feature_dim_reduced,
        "epsilon_regularizer": fid.epsilon_regularizer,
        "small_sample_warning": fid.small_sample_warning,
    }
