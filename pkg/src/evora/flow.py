"""Radial normalizing flow over latent features and the confidence score.

The flow maps a latent ``z`` to a standard normal sample; the density of ``z``
is the base density at ``f(z)`` times the Jacobian determinants of the
layers. Each layer is

    f(z) = z + beta * (z - z0) / (alpha + |z - z0|)

with ``alpha = softplus(alpha_raw)`` and ``beta = -alpha + softplus(beta_raw)``,
which keeps every layer invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_BUDGET_SCALE = 0.5 * math.log(4.0 * math.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class RadialLayer:
    z0: np.ndarray
    alpha_raw: float
    beta_raw: float

    @property
    def alpha(self) -> float:
        return float(softplus(self.alpha_raw))

    @property
    def beta(self) -> float:
        return float(-softplus(self.alpha_raw) + softplus(self.beta_raw))


@dataclass(frozen=True, eq=False)
class FlowModel:
    """Stack of radial layers stored as parameter arrays.

    ``z0`` has shape ``(L, H)``; ``alpha_raw`` and ``beta_raw`` have shape ``(L,)``.
    """

    z0: np.ndarray
    alpha_raw: np.ndarray
    beta_raw: np.ndarray

    def __post_init__(self):
        z0 = np.array(self.z0, dtype=float)
        if z0.ndim != 2:
            raise ValueError("z0 must have shape (n_layers, latent_dim)")
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "alpha_raw", np.array(self.alpha_raw, dtype=float).reshape(-1))
        object.__setattr__(self, "beta_raw", np.array(self.beta_raw, dtype=float).reshape(-1))
        if not (len(self.z0) == len(self.alpha_raw) == len(self.beta_raw)):
            raise ValueError("all layers must carry the same parameters")

    @classmethod
    def identity(cls, latent_dim: int) -> "FlowModel":
        return cls(np.zeros((0, latent_dim)), np.zeros(0), np.zeros(0))

    @classmethod
    def init(cls, latent_dim: int, n_layers: int = 8, rng: np.random.Generator | None = None, scale: float = 0.1):
        """Near-identity start: small random centres and beta close to zero."""
        rng = np.random.default_rng(0) if rng is None else rng
        z0 = scale * rng.standard_normal((n_layers, latent_dim))
        alpha_raw = np.zeros(n_layers)
        # softplus(beta_raw) == softplus(alpha_raw)  ->  beta == 0
        beta_raw = alpha_raw + 1e-3 * rng.standard_normal(n_layers)
        return cls(z0, alpha_raw, beta_raw)

    @property
    def latent_dim(self) -> int:
        return self.z0.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.alpha_raw)

    @property
    def layers(self) -> list[RadialLayer]:
        return [RadialLayer(self.z0[i], float(self.alpha_raw[i]), float(self.beta_raw[i])) for i in range(self.n_layers)]

    def params(self) -> dict[str, np.ndarray]:
        return {"z0": self.z0.copy(), "alpha_raw": self.alpha_raw.copy(), "beta_raw": self.beta_raw.copy()}

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray]) -> "FlowModel":
        return cls(params["z0"], params["alpha_raw"], params["beta_raw"])


def radial_forward(z, layer: RadialLayer):
    """Apply one layer to ``(..., H)`` inputs; returns ``(f(z), log|det J|)``."""
    z = np.asarray(z, dtype=float)
    out, logdet, _ = _layer_forward(z, np.asarray(layer.z0, dtype=float), layer.alpha, layer.beta)
    return out, (float(logdet) if logdet.ndim == 0 else logdet)


def _layer_forward(z, z0, alpha, beta):
    dim = z.shape[-1]
    d = z - z0
    r = np.sqrt((d * d).sum(axis=-1))
    h = 1.0 / (alpha + r)
    u = beta * h
    # 1 + beta*h + beta*h'(r)*r simplifies to 1 + alpha*beta*h^2
    v = alpha * beta * h * h
    out = z + u[..., None] * d
    logdet = (dim - 1) * np.log1p(u) + np.log1p(v)
    return out, logdet, (d, r, h, u, v)


def flow_forward(z, model: FlowModel):
    """Push latents through all layers; returns ``(x, sum log|det J|)``."""
    x = np.asarray(z, dtype=float)
    total = np.zeros(x.shape[:-1])
    alpha = softplus(model.alpha_raw)
    beta = -alpha + softplus(model.beta_raw)
    for i in range(model.n_layers):
        x, logdet, _ = _layer_forward(x, model.z0[i], alpha[i], beta[i])
        total = total + logdet
    return x, total


def flow_log_density(z, model: FlowModel):
    """log p(z) under the flow, for one latent or a ``(N, H)`` batch."""
    x, logdet = flow_forward(z, model)
    base = -0.5 * model.latent_dim * LOG_2PI - 0.5 * (x * x).sum(axis=-1)
    out = base + logdet
    return float(out) if np.ndim(out) == 0 else out


def flow_log_density_and_backward(z, model: FlowModel, g_logp):
    """Log density of a ``(N, H)`` batch plus the backward pass.

    ``g_logp`` is dL/dlogp per sample. Returns ``(logp, param_grads, dL/dz)``.
    """
    z = np.asarray(z, dtype=float)
    g_logp = np.asarray(g_logp, dtype=float)
    dim = model.latent_dim
    alpha = softplus(model.alpha_raw)
    beta = -alpha + softplus(model.beta_raw)

    x = z
    caches = []
    total = np.zeros(z.shape[:-1])
    for i in range(model.n_layers):
        x, logdet, cache = _layer_forward(x, model.z0[i], alpha[i], beta[i])
        caches.append(cache)
        total = total + logdet
    logp = -0.5 * dim * LOG_2PI - 0.5 * (x * x).sum(axis=-1) + total

    g_z0 = np.zeros_like(model.z0)
    g_alpha = np.zeros(model.n_layers)
    g_beta = np.zeros(model.n_layers)
    g_x = -x * g_logp[..., None]
    for i in reversed(range(model.n_layers)):
        d, r, h, u, v = caches[i]
        a, b = alpha[i], beta[i]
        g_u = (g_x * d).sum(axis=-1) + g_logp * (dim - 1) / (1.0 + u)
        g_v = g_logp / (1.0 + v)
        g_r = -b * h * h * g_u - 2.0 * a * b * h**3 * g_v
        safe_r = np.where(r > 0, r, 1.0)
        g_d = u[..., None] * g_x + np.where(r > 0, g_r / safe_r, 0.0)[..., None] * d
        g_z0[i] = -g_d.reshape(-1, dim).sum(axis=0)
        g_alpha[i] = (-b * h * h * g_u + (b * h * h - 2.0 * a * b * h**3) * g_v).sum()
        g_beta[i] = (h * g_u + a * h * h * g_v).sum()
        g_x = g_x + g_d

    sig_a = expit(model.alpha_raw)
    sig_b = expit(model.beta_raw)
    grads = {
        "z0": g_z0,
        "alpha_raw": (g_alpha - g_beta) * sig_a,
        "beta_raw": g_beta * sig_b,
    }
    return logp, grads, g_x


def flow_nll_grad(batch, model: FlowModel) -> dict[str, np.ndarray]:
    """Gradient of the mean negative log density of ``batch`` w.r.t. the layer parameters."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    n = batch.shape[0]
    _, grads, _ = flow_log_density_and_backward(batch, model, np.full(n, -1.0 / n))
    return grads


def flow_mean_nll(batch, model: FlowModel) -> float:
    return float(-np.mean(flow_log_density(np.atleast_2d(batch), model)))


def certainty_budget(latent_dim: int, scale: float = DEFAULT_BUDGET_SCALE) -> float:
    """Evidence scale N_H = exp(scale * H)."""
    if latent_dim < 1:
        raise ValueError("latent dimension must be at least 1")
    return math.exp(scale * latent_dim)


@dataclass(frozen=True)
class ConfidenceCalibration:
    p_min: float
    p_max: float
    g_thres: float = 0.0

    def __post_init__(self):
        if not (self.p_max > self.p_min >= 0):
            raise ValueError("calibration needs p_max > p_min >= 0")


def confidence_score(density, cal: ConfidenceCalibration):
    """Affine rescaling of a latent density; not clipped to [0, 1]."""
    out = (np.asarray(density, dtype=float) - cal.p_min) / (cal.p_max - cal.p_min)
    return float(out) if out.ndim == 0 else out
