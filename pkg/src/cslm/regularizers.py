"""Distribution-matching penalties on the two language blocks of the output projection.

Both penalties treat each block's rows as samples. SKLD fits a Gaussian to
each block and takes the symmetric KL divergence; CD compares block means by
cosine. Gradients are analytic and flow back to every row of both blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import PartitionView

COVARIANCES = ("auto", "full", "diagonal")


class RegularizerError(ValueError):
    pass


@dataclass
class GaussianFit:
    """Mean and biased covariance (plus ridge) of a block of rows."""

    mean: np.ndarray
    cov: np.ndarray
    ridge: float
    n: int
    centered: np.ndarray = field(repr=False)
    diagonal: bool = False
    ridge_scale: float | None = None   # set when ridge = scale * tr(S) / z
    chol: tuple = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def inverse(self) -> np.ndarray:
        if self.chol is None:
            raise RegularizerError(f"covariance of a {self.n}x{self.dim} block is singular; use a positive ridge")
        return cho_solve(self.chol, np.eye(self.dim))

    def backprop(self, d_mean: np.ndarray, d_cov: np.ndarray) -> np.ndarray:
        """Chain d(loss)/d(mean), d(loss)/d(cov) back to the rows."""
        G = 0.5 * (d_cov + d_cov.T)
        if self.diagonal:
            G = np.diag(np.diag(G))
        if self.ridge_scale is not None:
            G = G + (self.ridge_scale / self.dim) * np.trace(G) * np.eye(self.dim)
        return (2.0 / self.n) * self.centered @ G + d_mean / self.n


def gaussian_fit(rows: np.ndarray, ridge: float = 0.0, relative: bool = False,
                 diagonal: bool = False) -> GaussianFit:
    """Fit N(mean, S + ridge*I) with S the divide-by-n sample covariance.

    With ``relative`` the ridge added is ``ridge * tr(S) / z``. A singular
    covariance is only an error once a ridge has been added; without one
    the moments are returned and inversion fails later.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise RegularizerError("rows must be a 2-D block")
    n, z = rows.shape
    if n < 2:
        raise RegularizerError(f"a Gaussian fit needs at least 2 rows, got {n}")
    if ridge < 0:
        raise RegularizerError("ridge must be non-negative")
    mean = rows.mean(axis=0)
    centered = rows - mean
    S = centered.T @ centered / n
    if diagonal:
        S = np.diag(np.diag(S))
    eps = ridge * np.trace(S) / z if relative else ridge
    cov = S + eps * np.eye(z)
    try:
        chol = cho_factor(cov, lower=True)
    except LinAlgError as e:
        if eps > 0.0:
            raise RegularizerError(
                f"covariance of a {n}x{z} block is not positive definite with ridge {eps:g}; use a larger ridge"
            ) from e
        chol = None
    return GaussianFit(mean, cov, float(eps), n, centered, diagonal, ridge if relative else None, chol)


@dataclass
class ConstraintValue:
    loss: float
    grad_l1: np.ndarray
    grad_l2: np.ndarray
    components: dict[str, float] = field(default_factory=dict)

    def full_grad(self, part: PartitionView, shape: tuple[int, int]) -> np.ndarray:
        g = np.zeros(shape)
        g[part.l1] = self.grad_l1
        g[part.l2] = self.grad_l2
        return g


def skld(fit1: GaussianFit, fit2: GaussianFit) -> ConstraintValue:
    """Symmetric KL divergence between two Gaussian fits.

    0.5 * [tr(A^-1 B + B^-1 A) + d^T (A^-1 + B^-1) d - 2z], d = mu1 - mu2.
    """
    if fit1.dim != fit2.dim:
        raise RegularizerError("fits differ in dimension")
    z = fit1.dim
    A, B = fit1.cov, fit2.cov
    Ai, Bi = fit1.inverse(), fit2.inverse()
    d = fit1.mean - fit2.mean
    M = Ai + Bi
    Md = M @ d
    loss = 0.5 * (np.sum(Ai * B) + np.sum(Bi * A) + d @ Md - 2 * z)
    Aid, Bid = Ai @ d, Bi @ d
    dA = 0.5 * (Bi - Ai @ B @ Ai - np.outer(Aid, Aid))
    dB = 0.5 * (Ai - Bi @ A @ Bi - np.outer(Bid, Bid))
    g1 = fit1.backprop(Md, dA)
    g2 = fit2.backprop(-Md, dB)
    return ConstraintValue(float(loss), g1, g2, {"skld": float(loss)})


def cosine_distance(fit1: GaussianFit, fit2: GaussianFit) -> ConstraintValue:
    """1 - cos(mu1, mu2); gradients reach the rows through the means only."""
    m1, m2 = fit1.mean, fit2.mean
    n1, n2 = np.linalg.norm(m1), np.linalg.norm(m2)
    if n1 == 0.0 or n2 == 0.0:
        raise RegularizerError("cosine distance undefined for a zero-norm mean")
    cos = (m1 @ m2) / (n1 * n2)
    d1 = -(m2 / (n1 * n2) - cos * m1 / n1 ** 2)
    d2 = -(m1 / (n1 * n2) - cos * m2 / n2 ** 2)
    zero = np.zeros((fit1.dim, fit1.dim))
    loss = float(1.0 - cos)
    return ConstraintValue(loss, fit1.backprop(d1, zero), fit2.backprop(d2, zero), {"cd": loss})


@dataclass(frozen=True)
class RegularizerConfig:
    skld_weight: float = 0.0
    cd_weight: float = 0.0
    ridge: float = 1e-4
    relative_ridge: bool = True
    covariance: str = "auto"

    def __post_init__(self):
        if self.skld_weight < 0 or self.cd_weight < 0:
            raise RegularizerError("constraint weights must be non-negative")
        if self.covariance not in COVARIANCES:
            raise RegularizerError(f"covariance must be one of {COVARIANCES}")
        if self.ridge < 0:
            raise RegularizerError("ridge must be non-negative")

    @property
    def active(self) -> bool:
        return self.skld_weight > 0 or self.cd_weight > 0

    @classmethod
    def named(cls, name: str, weight: float = 1.0, **kw) -> "RegularizerConfig":
        """'none', 'skld', 'cd' or 'skld+cd'."""
        parts = set(name.lower().replace(",", "+").split("+")) - {"none", ""}
        unknown = parts - {"skld", "cd"}
        if unknown:
            raise RegularizerError(f"unknown constraint {'+'.join(sorted(unknown))!r}")
        return cls(skld_weight=weight if "skld" in parts else 0.0,
                   cd_weight=weight if "cd" in parts else 0.0, **kw)

    @property
    def name(self) -> str:
        parts = [p for p, w in (("skld", self.skld_weight), ("cd", self.cd_weight)) if w > 0]
        return "+".join(parts) or "none"


def constraint_loss(W: np.ndarray, part: PartitionView, cfg: RegularizerConfig) -> ConstraintValue:
    """Weighted SKLD + CD penalty over the full W1/W2 blocks.

    ``components`` holds the unweighted terms; ``loss`` and gradients are weighted.
    """
    n1, n2 = len(part.l1), len(part.l2)
    z = W.shape[1]
    g1, g2 = np.zeros((n1, z)), np.zeros((n2, z))
    comps = {"skld": 0.0, "cd": 0.0}
    if not cfg.active:
        return ConstraintValue(0.0, g1, g2, comps)
    diagonal = cfg.covariance == "diagonal" or (cfg.covariance == "auto" and min(n1, n2) <= z)
    fit1 = gaussian_fit(W[part.l1], cfg.ridge, cfg.relative_ridge, diagonal)
    fit2 = gaussian_fit(W[part.l2], cfg.ridge, cfg.relative_ridge, diagonal)
    loss = 0.0
    for weight, fn, key in ((cfg.skld_weight, skld, "skld"), (cfg.cd_weight, cosine_distance, "cd")):
        if weight > 0:
            v = fn(fit1, fit2)
            comps[key] = v.loss
            loss += weight * v.loss
            g1 += weight * v.grad_l1
            g2 += weight * v.grad_l2
    return ConstraintValue(loss, g1, g2, comps)
