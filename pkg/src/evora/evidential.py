"""Dirichlet beliefs over traction bins and the uncertainty-aware losses.

Every loss works on the last axis, so the same call handles a single
belief or a ``(N, B)`` batch. ``Pmf`` and ``DirichletBelief`` expose
``__array__`` and can be passed anywhere an array is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from evora.special import digamma, log_multivariate_beta, trigamma

PMF_TOL = 1e-9


def uniform_edges(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_bins + 1)


def bin_centers(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    return 0.5 * (edges[1:] + edges[:-1])


@dataclass(frozen=True, eq=False)
class Pmf:
    """Categorical distribution over ``B`` traction bins on [0, 1]."""

    probs: np.ndarray
    bin_edges: np.ndarray = None

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 2:
            raise ValueError("a Pmf needs a 1-D vector with at least two bins")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PMF_TOL:
            raise ValueError("probabilities must be non-negative and sum to 1")
        edges = uniform_edges(probs.size) if self.bin_edges is None else np.array(self.bin_edges, dtype=float)
        if edges.shape != (probs.size + 1,) or np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing with B+1 entries")
        probs.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "bin_edges", edges)

    @property
    def n_bins(self) -> int:
        return self.probs.size

    @property
    def centers(self) -> np.ndarray:
        return bin_centers(self.bin_edges)

    def mean(self) -> float:
        return float(self.probs @ self.centers)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return self.n_bins


@dataclass(frozen=True, eq=False)
class DirichletBelief:
    beta: np.ndarray
    beta0: float = field(init=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 1 or beta.size < 2:
            raise ValueError("concentration must be a vector with at least two entries")
        if not np.all(beta > 0) or not np.all(np.isfinite(beta)):
            raise ValueError("concentration parameters must be finite and strictly positive")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta0", float(beta.sum()))

    @classmethod
    def uniform_prior(cls, n_bins: int) -> "DirichletBelief":
        return cls(np.ones(n_bins))

    def __array__(self, dtype=None, copy=None):
        return self.beta if dtype is None else self.beta.astype(dtype)

    def __len__(self):
        return self.beta.size


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0  # UCE
    w2: float = 1.0  # UEMD^2
    w3: float = 1e-5  # entropy

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("loss weights must be non-negative")


def _beta(d) -> np.ndarray:
    beta = np.asarray(d, dtype=float)
    if not np.all(beta > 0):
        raise ValueError("concentration parameters must be strictly positive")
    return beta


def _pair(d, y):
    beta, y = _beta(d), np.asarray(y, dtype=float)
    if beta.shape[-1] != y.shape[-1]:
        raise ValueError(f"bin count mismatch: {beta.shape[-1]} vs {y.shape[-1]}")
    return beta, y


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def cumulative_sum(p) -> np.ndarray:
    return np.cumsum(np.asarray(p, dtype=float), axis=-1)


def dirichlet_mean(d):
    """Expected PMF beta / beta_0. Returns a ``Pmf`` for a belief, an array otherwise."""
    beta = _beta(d)
    mean = beta / beta.sum(axis=-1, keepdims=True)
    if isinstance(d, DirichletBelief):
        return Pmf(mean)
    return mean


def dirichlet_entropy(d):
    beta = _beta(d)
    n_bins = beta.shape[-1]
    beta0 = beta.sum(axis=-1)
    ent = (
        log_multivariate_beta(beta)
        + (beta0 - n_bins) * digamma(beta0)
        - ((beta - 1.0) * digamma(beta)).sum(axis=-1)
    )
    return _scalar(ent)


def dirichlet_posterior(n_prior: float, p_prior, n_obs: float, p_pred) -> Pmf:
    """Evidence-weighted blend of a prior PMF and a predicted PMF."""
    prior, pred = np.asarray(p_prior, dtype=float), np.asarray(p_pred, dtype=float)
    if prior.shape != pred.shape:
        raise ValueError("prior and prediction must share the bin count")
    total = n_prior + n_obs
    if total <= 0:
        raise ValueError("total evidence must be positive")
    edges = getattr(p_prior, "bin_edges", None)
    probs = (n_prior * prior + n_obs * pred) / total
    return Pmf(probs / probs.sum(), edges)


def uce_loss(d, y):
    """Expected cross entropy of ``y`` under p ~ Dir(beta)."""
    beta, y = _pair(d, y)
    beta0 = beta.sum(axis=-1, keepdims=True)
    return _scalar(-(y * (digamma(beta) - digamma(beta0))).sum(axis=-1))


def emd2_loss(p, y):
    """Squared EMD between PMFs on equally spaced bins; the (1/B) factor is dropped."""
    diff = cumulative_sum(p) - cumulative_sum(y)
    return _scalar((diff * diff).sum(axis=-1))


def uemd2_loss(d, y):
    """Closed-form E[EMD^2(p, y)] for p ~ Dir(beta)."""
    beta, y = _pair(d, y)
    cs_beta = np.cumsum(beta, axis=-1)
    cs_y = np.cumsum(y, axis=-1)
    beta0 = cs_beta[..., -1]
    cs_mean = cs_beta / beta0[..., None]
    quad = (cs_mean * (cs_beta + 1.0)).sum(axis=-1) / (beta0 + 1.0)
    eta = -2.0 * (cs_mean * cs_y).sum(axis=-1) + (cs_y * cs_y).sum(axis=-1)
    return _scalar(quad + eta)


def combined_loss(d, y, w: LossWeights = LossWeights()):
    out = w.w1 * np.asarray(uce_loss(d, y)) + w.w2 * np.asarray(uemd2_loss(d, y))
    if w.w3:
        out = out - w.w3 * np.asarray(dirichlet_entropy(d))
    return _scalar(out)


def _rev_cumsum(x: np.ndarray) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(x, axis=-1), axis=-1), axis=-1)


def grad_uce(beta: np.ndarray, y: np.ndarray) -> np.ndarray:
    beta0 = beta.sum(axis=-1, keepdims=True)
    return -y * trigamma(beta) + y.sum(axis=-1, keepdims=True) * trigamma(beta0)


def grad_uemd2(beta: np.ndarray, y: np.ndarray) -> np.ndarray:
    cs_beta = np.cumsum(beta, axis=-1)
    cs_y = np.cumsum(y, axis=-1)
    s = cs_beta[..., -1:]
    quad = (cs_beta * (cs_beta + 1.0)).sum(axis=-1, keepdims=True)
    cross = (cs_beta * cs_y).sum(axis=-1, keepdims=True)
    denom = s * (s + 1.0)
    # d cs_b / d beta_k = [k <= b], hence the reversed cumulative sums
    g_quad = _rev_cumsum(2.0 * cs_beta + 1.0) / denom - quad * (2.0 * s + 1.0) / (denom * denom)
    g_cross = -2.0 * _rev_cumsum(cs_y) / s + 2.0 * cross / (s * s)
    return g_quad + g_cross


def grad_entropy(beta: np.ndarray) -> np.ndarray:
    n_bins = beta.shape[-1]
    beta0 = beta.sum(axis=-1, keepdims=True)
    return (beta0 - n_bins) * trigamma(beta0) - (beta - 1.0) * trigamma(beta)


def grad_combined_loss(d, y, w: LossWeights = LossWeights()) -> np.ndarray:
    """Analytic gradient of ``combined_loss`` with respect to the concentration."""
    beta, y = _pair(d, y)
    grad = np.zeros_like(beta)
    if w.w1:
        grad += w.w1 * grad_uce(beta, y)
    if w.w2:
        grad += w.w2 * grad_uemd2(beta, y)
    if w.w3:
        grad -= w.w3 * grad_entropy(beta)
    return grad


def sample_dirichlet(beta, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``(n_samples, B)`` PMFs by normalising independent Gamma(beta_b, 1) variates."""
    beta = _beta(beta)
    g = rng.standard_gamma(np.broadcast_to(beta, (n_samples, beta.size)))
    return g / g.sum(axis=1, keepdims=True)


def mc_dirichlet_losses(d, y, n_samples: int, seed: int, chunk: int = 100_000) -> tuple[float, float]:
    """Monte-Carlo estimates of (UEMD^2, UCE) from one shared set of Dirichlet draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    beta, y = _pair(d, y)
    rng = np.random.default_rng(seed)
    cs_y = np.cumsum(y)
    emd_total = 0.0
    ce_total = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        g = rng.standard_gamma(np.broadcast_to(beta, (n, beta.size)))
        total = g.sum(axis=1, keepdims=True)
        diff = np.cumsum(g, axis=1) / total - cs_y
        emd_total += float((diff * diff).sum())
        with np.errstate(divide="ignore"):
            ce_total -= float(((np.log(g) - np.log(total)) @ y).sum())
        done += n
    return emd_total / n_samples, ce_total / n_samples


def mc_uemd2_oracle(d, y, n_samples: int, seed: int) -> float:
    return mc_dirichlet_losses(d, y, n_samples, seed)[0]


def mc_uce_oracle(d, y, n_samples: int, seed: int) -> float:
    return mc_dirichlet_losses(d, y, n_samples, seed)[1]
