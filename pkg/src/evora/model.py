"""Per-cell evidential traction predictor.

Terrain features (elevation plus a semantic one-hot) pass through a one
hidden layer perceptron to an ``H``-dimensional latent. The latent is
standardised (batch statistics while training jointly, frozen statistics
afterwards), fed to two softmax heads for linear and angular traction, and
to a radial flow whose density sets the evidence of the Dirichlet update

    beta = n_prior * p_prior + n_obs * p_head,    n_obs = N_H * p_flow(z)

with ``n_prior = B`` and a uniform ``p_prior``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from evora.evidential import (
    DirichletBelief,
    LossWeights,
    Pmf,
    combined_loss,
    emd2_loss,
    grad_combined_loss,
    uce_loss,
    uniform_edges,
)
from evora.flow import (
    DEFAULT_BUDGET_SCALE,
    ConfidenceCalibration,
    FlowModel,
    certainty_budget,
    confidence_score,
    flow_log_density,
    flow_log_density_and_backward,
)
from evora.optim import Adam

ARTIFACT_VERSION = 1
SEMANTIC_CLASSES = ("dirt", "vegetation")
NORM_EPS = 1e-5
# log-evidence ceiling; keeps exp() finite for latents sitting on a sharp flow mode
MAX_LOG_EVIDENCE = 40.0

ENCODER_KEYS = ("W1", "b1", "W2", "b2")
HEAD_KEYS = ("W_lin", "b_lin", "W_ang", "b_ang")
FLOW_KEYS = ("z0", "alpha_raw", "beta_raw")


@dataclass(frozen=True)
class TerrainFeature:
    elevation: float
    semantic_onehot: tuple[float, ...]

    def __post_init__(self):
        onehot = tuple(float(v) for v in self.semantic_onehot)
        if abs(sum(onehot) - 1.0) > 1e-12 or any(v not in (0.0, 1.0) for v in onehot):
            raise ValueError("semantic encoding must be one-hot")
        if not math.isfinite(self.elevation):
            raise ValueError("elevation must be finite")
        object.__setattr__(self, "semantic_onehot", onehot)

    @classmethod
    def from_class(cls, elevation: float, semantic: int, n_classes: int = len(SEMANTIC_CLASSES)):
        onehot = [0.0] * n_classes
        onehot[semantic] = 1.0
        return cls(float(elevation), tuple(onehot))

    @property
    def semantic(self) -> int:
        return self.semantic_onehot.index(1.0)

    def vector(self) -> np.ndarray:
        return np.array((self.elevation, *self.semantic_onehot))


@dataclass(frozen=True)
class TractionSample:
    feature: TerrainFeature
    psi_lin: float
    psi_ang: float
    cell: tuple[int, int] | None = None

    def __post_init__(self):
        if not (0.0 <= self.psi_lin <= 1.0 and 0.0 <= self.psi_ang <= 1.0):
            raise ValueError("traction values must lie in [0, 1]")


def feature_matrix(elevation, semantic, n_classes: int = len(SEMANTIC_CLASSES)) -> np.ndarray:
    elevation = np.asarray(elevation, dtype=float).reshape(-1)
    semantic = np.asarray(semantic, dtype=int).reshape(-1)
    return np.column_stack([elevation, np.eye(n_classes)[semantic]])


def empirical_pmf(samples, n_bins: int) -> tuple[Pmf, int]:
    """Histogram of traction samples over ``n_bins`` equal bins on [0, 1].

    An empty sample list gives the uniform PMF with count 0.
    """
    if n_bins < 2:
        raise ValueError("need at least two bins")
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size == 0:
        return Pmf(np.full(n_bins, 1.0 / n_bins)), 0
    counts, _ = np.histogram(samples, bins=n_bins, range=(0.0, 1.0))
    return Pmf(counts / counts.sum()), int(samples.size)


@dataclass(frozen=True, eq=False)
class TractionDataset:
    """Cell-level training targets: features ``(N, F)``, PMFs ``(N, B)``, counts ``(N,)``."""

    features: np.ndarray
    y_lin: np.ndarray
    y_ang: np.ndarray
    weights: np.ndarray
    cells: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.y_lin) == len(self.y_ang) == len(self.weights) == n):
            raise ValueError("dataset arrays disagree in length")

    def __len__(self):
        return len(self.features)

    @property
    def n_bins(self) -> int:
        return self.y_lin.shape[1]

    @classmethod
    def from_records(cls, records) -> "TractionDataset":
        """Build from ``(TerrainFeature, Pmf, Pmf, count)`` tuples."""
        records = list(records)
        if not records:
            return cls(np.zeros((0, 1 + len(SEMANTIC_CLASSES))), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        feats = np.array([r[0].vector() for r in records])
        y_lin = np.array([np.asarray(r[1]) for r in records])
        y_ang = np.array([np.asarray(r[2]) for r in records])
        weights = np.array([float(r[3]) for r in records])
        return cls(feats, y_lin, y_ang, weights)

    @classmethod
    def from_samples(cls, samples, n_bins: int) -> "TractionDataset":
        """Group traction samples by cell and histogram each cell."""
        groups: dict = {}
        for s in samples:
            key = s.cell if s.cell is not None else (s.feature.elevation, s.feature.semantic_onehot)
            groups.setdefault(key, []).append(s)
        feats, y_lin, y_ang, weights, cells = [], [], [], [], []
        for key, group in groups.items():
            feats.append(group[0].feature.vector())
            y_lin.append(empirical_pmf([s.psi_lin for s in group], n_bins)[0].probs)
            y_ang.append(empirical_pmf([s.psi_ang for s in group], n_bins)[0].probs)
            weights.append(len(group))
            cells.append(key if group[0].cell is not None else (-1, -1))
        return cls(np.array(feats), np.array(y_lin), np.array(y_ang), np.array(weights, dtype=float), np.array(cells))

    def subset(self, idx) -> "TractionDataset":
        cells = None if self.cells is None else self.cells[idx]
        return TractionDataset(self.features[idx], self.y_lin[idx], self.y_ang[idx], self.weights[idx], cells)

    @staticmethod
    def concat(parts) -> "TractionDataset":
        parts = [p for p in parts if len(p)]
        cells = None
        if parts and all(p.cells is not None for p in parts):
            cells = np.concatenate([p.cells for p in parts])
        return TractionDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.y_lin for p in parts]),
            np.concatenate([p.y_ang for p in parts]),
            np.concatenate([p.weights for p in parts]),
            cells,
        )


@dataclass(frozen=True)
class TrainConfig:
    n_bins: int = 20
    hidden: int = 32
    latent_dim: int = 4
    n_flow_layers: int = 8
    budget_scale: float = DEFAULT_BUDGET_SCALE
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1e-5
    lr: float = 1e-3
    flow_lr: float | None = None
    latent_scale: float = 0.5
    batch_size: int = 512
    joint_steps: int = 1500
    flow_steps: int = 500
    seed: int = 0

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.w3)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class EvidentialModel:
    params: dict
    flow: FlowModel
    norm_mean: np.ndarray
    norm_std: np.ndarray
    n_bins: int
    budget_scale: float = DEFAULT_BUDGET_SCALE
    calibration: ConfidenceCalibration | None = None
    config: TrainConfig = field(default_factory=TrainConfig)
    semantic_classes: tuple[str, ...] = SEMANTIC_CLASSES

    @property
    def latent_dim(self) -> int:
        return self.params["W2"].shape[1]

    @property
    def bin_edges(self) -> np.ndarray:
        return uniform_edges(self.n_bins)

    @property
    def budget(self) -> float:
        return certainty_budget(self.latent_dim, self.budget_scale)

    def all_params(self) -> dict:
        out = {k: v for k, v in self.params.items()}
        out.update(self.flow.params())
        return out


def init_model(cfg: TrainConfig, n_features: int = 1 + len(SEMANTIC_CLASSES)) -> EvidentialModel:
    rng = np.random.default_rng(cfg.seed)
    params = {
        "W1": rng.normal(scale=1.0 / math.sqrt(n_features), size=(n_features, cfg.hidden)),
        "b1": rng.normal(scale=0.5, size=cfg.hidden),
        "W2": rng.normal(scale=1.0 / math.sqrt(cfg.hidden), size=(cfg.hidden, cfg.latent_dim)),
        "b2": np.zeros(cfg.latent_dim),
        "W_lin": rng.normal(scale=0.1, size=(cfg.latent_dim, cfg.n_bins)),
        "b_lin": np.zeros(cfg.n_bins),
        "W_ang": rng.normal(scale=0.1, size=(cfg.latent_dim, cfg.n_bins)),
        "b_ang": np.zeros(cfg.n_bins),
    }
    flow = FlowModel.init(cfg.latent_dim, cfg.n_flow_layers, rng)
    return EvidentialModel(
        params=params,
        flow=flow,
        norm_mean=np.zeros(cfg.latent_dim),
        norm_std=np.ones(cfg.latent_dim),
        n_bins=cfg.n_bins,
        budget_scale=cfg.budget_scale,
        config=cfg,
    )


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _encode(params, x, norm=None, scale=1.0):
    """Hidden activations, raw latent, scaled standardised latent and the std used.

    ``norm=None`` standardises with the batch statistics.
    """
    hidden = np.tanh(x @ params["W1"] + params["b1"])
    raw = hidden @ params["W2"] + params["b2"]
    if norm is None:
        mean = raw.mean(axis=0)
        std = np.sqrt(raw.var(axis=0) + NORM_EPS)
    else:
        mean, std = norm
    return hidden, raw, scale * (raw - mean) / std, std


def _heads(params, z):
    return _softmax(z @ params["W_lin"] + params["b_lin"]), _softmax(z @ params["W_ang"] + params["b_ang"])


def _evidence(log_density, budget):
    log_n = np.minimum(math.log(budget) + log_density, MAX_LOG_EVIDENCE)
    return np.exp(log_n), log_n < MAX_LOG_EVIDENCE


def predict_batch(model: EvidentialModel, features):
    """Concentrations for both heads, evidence and latent log density for ``(N, F)`` features."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    _, _, z, _ = _encode(model.params, x, (model.norm_mean, model.norm_std), model.config.latent_scale)
    p_lin, p_ang = _heads(model.params, z)
    logp = flow_log_density(z, model.flow)
    logp = np.atleast_1d(logp)
    n_obs, _ = _evidence(logp, model.budget)
    beta_lin = 1.0 + n_obs[:, None] * p_lin
    beta_ang = 1.0 + n_obs[:, None] * p_ang
    return beta_lin, beta_ang, n_obs, logp


def latents(model: EvidentialModel, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    return _encode(model.params, x, (model.norm_mean, model.norm_std), model.config.latent_scale)[2]


def evidential_forward(model: EvidentialModel, feature: TerrainFeature):
    """Dirichlet beliefs (linear, angular), evidence and latent log density for one cell."""
    beta_lin, beta_ang, n_obs, logp = predict_batch(model, feature.vector()[None, :])
    return DirichletBelief(beta_lin[0]), DirichletBelief(beta_ang[0]), float(n_obs[0]), float(logp[0])


def posterior_means(model: EvidentialModel, features):
    beta_lin, beta_ang, n_obs, logp = predict_batch(model, features)
    return (
        beta_lin / beta_lin.sum(axis=1, keepdims=True),
        beta_ang / beta_ang.sum(axis=1, keepdims=True),
        n_obs,
        logp,
    )


def confidence(model: EvidentialModel, features) -> np.ndarray:
    if model.calibration is None:
        raise ValueError("model has no confidence calibration")
    logp = predict_batch(model, features)[3]
    return confidence_score(np.exp(logp), model.calibration)


def loss_and_grads(all_params: dict, batch: TractionDataset, cfg: TrainConfig, norm=None):
    """Count-weighted batch loss and gradients for every parameter.

    The loss is ``(1/N) sum_i w_i (L(beta_lin_i, y_lin_i) + L(beta_ang_i, y_ang_i))`` so
    doubling a cell's count doubles its contribution exactly.
    """
    x = batch.features
    n = len(x)
    budget = certainty_budget(cfg.latent_dim, cfg.budget_scale)
    weights = cfg.weights
    flow = FlowModel(all_params["z0"], all_params["alpha_raw"], all_params["beta_raw"])

    scale = cfg.latent_scale
    hidden, raw, z, std = _encode(all_params, x, norm, scale)
    p_lin, p_ang = _heads(all_params, z)

    # two passes through the flow: the first only to obtain log p, the second with its gradient
    logp = np.atleast_1d(flow_log_density(z, flow))
    n_obs, live = _evidence(logp, budget)
    beta_lin = 1.0 + n_obs[:, None] * p_lin
    beta_ang = 1.0 + n_obs[:, None] * p_ang
    cell_w = batch.weights / n
    loss = float(
        cell_w
        @ (
            np.asarray(combined_loss(beta_lin, batch.y_lin, weights))
            + np.asarray(combined_loss(beta_ang, batch.y_ang, weights))
        )
    )

    g_beta_lin = cell_w[:, None] * grad_combined_loss(beta_lin, batch.y_lin, weights)
    g_beta_ang = cell_w[:, None] * grad_combined_loss(beta_ang, batch.y_ang, weights)
    g_n = (g_beta_lin * p_lin).sum(axis=1) + (g_beta_ang * p_ang).sum(axis=1)
    g_logp = np.where(live, g_n * n_obs, 0.0)

    grads = {}
    g_z = np.zeros_like(z)
    for head, p, g_beta in (("lin", p_lin, g_beta_lin), ("ang", p_ang, g_beta_ang)):
        g_p = g_beta * n_obs[:, None]
        g_logits = p * (g_p - (g_p * p).sum(axis=1, keepdims=True))
        grads[f"W_{head}"] = z.T @ g_logits
        grads[f"b_{head}"] = g_logits.sum(axis=0)
        g_z += g_logits @ all_params[f"W_{head}"].T

    _, flow_grads, g_z_flow = flow_log_density_and_backward(z, flow, g_logp)
    grads.update(flow_grads)
    g_z += g_z_flow

    g_zhat = scale * g_z
    if norm is None:
        zhat = z / scale
        g_raw = (g_zhat - g_zhat.mean(axis=0) - zhat * (g_zhat * zhat).mean(axis=0)) / std
    else:
        g_raw = g_zhat / std
    grads["W2"] = hidden.T @ g_raw
    grads["b2"] = g_raw.sum(axis=0)
    g_pre = (g_raw @ all_params["W2"].T) * (1.0 - hidden * hidden)
    grads["W1"] = x.T @ g_pre
    grads["b1"] = g_pre.sum(axis=0)
    return loss, grads


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        if n <= batch_size:
            yield np.arange(n)
            continue
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def _population_norm(params, x):
    raw = _encode(params, x)[1]
    return raw.mean(axis=0), np.sqrt(raw.var(axis=0) + NORM_EPS)


def train(dataset: TractionDataset, cfg: TrainConfig = TrainConfig(), history: list | None = None) -> EvidentialModel:
    """Two-step training: joint descent on everything, then flow-only fine-tuning.

    If ``history`` is given, the per-step batch losses are appended to it.
    """
    if not isinstance(dataset, TractionDataset):
        dataset = TractionDataset.from_records(dataset)
    train_set = dataset.subset(dataset.weights > 0)
    if len(train_set) == 0:
        raise ValueError("training dataset is empty")
    if train_set.n_bins != cfg.n_bins:
        raise ValueError(f"dataset has {train_set.n_bins} bins, config expects {cfg.n_bins}")
    model = init_model(cfg, train_set.features.shape[1])
    params = model.all_params()
    rng = np.random.default_rng([cfg.seed, 1])
    batches = _batches(len(train_set), cfg.batch_size, rng)

    opt = Adam(lr=cfg.lr)
    flow_opt = Adam(lr=cfg.flow_lr or cfg.lr)
    for _ in range(cfg.joint_steps):
        loss, grads = loss_and_grads(params, train_set.subset(next(batches)), cfg)
        opt.step(params, grads, keys=ENCODER_KEYS + HEAD_KEYS)
        flow_opt.step(params, grads, keys=FLOW_KEYS)
        if history is not None:
            history.append(loss)

    norm = _population_norm(params, train_set.features)
    for _ in range(cfg.flow_steps):
        loss, grads = loss_and_grads(params, train_set.subset(next(batches)), cfg, norm=norm)
        flow_opt.step(params, grads, keys=FLOW_KEYS)
        if history is not None:
            history.append(loss)

    model = EvidentialModel(
        params={k: params[k] for k in ENCODER_KEYS + HEAD_KEYS},
        flow=FlowModel(params["z0"], params["alpha_raw"], params["beta_raw"]),
        norm_mean=norm[0],
        norm_std=norm[1],
        n_bins=cfg.n_bins,
        budget_scale=cfg.budget_scale,
        config=cfg,
    )
    return calibrate(model, train_set.features)


def calibrate(model: EvidentialModel, features, g_thres: float = 0.0) -> EvidentialModel:
    """Attach p_min / p_max taken over the latent densities of the training features."""
    density = np.exp(predict_batch(model, features)[3])
    p_min, p_max = float(density.min()), float(density.max())
    if not p_max > p_min:
        p_max = p_min + max(1e-12, 1e-9 * p_min)
    return replace(model, calibration=ConfidenceCalibration(p_min, p_max, g_thres))


def dataset_loss(model: EvidentialModel, dataset: TractionDataset) -> float:
    params = model.all_params()
    return loss_and_grads(params, dataset, model.config, norm=(model.norm_mean, model.norm_std))[0]


@dataclass(frozen=True)
class ValidationScores:
    emd2: float
    uce: float
    kl: float


def kl_divergence(target, pred, floor: float = 1e-12):
    """KL(target || pred) along the last axis; zero bins are floored at ``floor``."""
    target = np.asarray(target, dtype=float)
    pred = np.maximum(np.asarray(pred, dtype=float), floor)
    safe_t = np.maximum(target, floor)
    return (target * (np.log(safe_t) - np.log(pred))).sum(axis=-1)


def validation_scores(model: EvidentialModel, dataset: TractionDataset) -> ValidationScores:
    """Count-weighted means over cells, each averaged over the two heads."""
    beta_lin, beta_ang, _, _ = predict_batch(model, dataset.features)
    mean_lin = beta_lin / beta_lin.sum(axis=1, keepdims=True)
    mean_ang = beta_ang / beta_ang.sum(axis=1, keepdims=True)
    w = dataset.weights / dataset.weights.sum()
    emd = 0.5 * (emd2_loss(mean_lin, dataset.y_lin) + emd2_loss(mean_ang, dataset.y_ang))
    uce = 0.5 * (uce_loss(beta_lin, dataset.y_lin) + uce_loss(beta_ang, dataset.y_ang))
    kl = 0.5 * (kl_divergence(dataset.y_lin, mean_lin) + kl_divergence(dataset.y_ang, mean_ang))
    return ValidationScores(float(w @ emd), float(w @ uce), float(w @ kl))


def select_model(candidates, validation: TractionDataset) -> EvidentialModel:
    """Lowest validation EMD^2; ties go to lower validation UCE, then to the earlier candidate."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate models")
    keys = []
    for i, model in enumerate(candidates):
        s = validation_scores(model, validation)
        keys.append((s.emd2, s.uce, i))
    return candidates[min(keys)[2]]


SWEEP_LR = (1e-4, 3e-4, 1e-3)
SWEEP_ENTROPY = (0.0, 1e-6, 1e-5)
SWEEP_UEMD2 = (0.1, 1.0, 10.0)


def sweep_grid(loss: str, base: TrainConfig) -> list[TrainConfig]:
    """Hyperparameter grid for a loss variant ('uce', 'uemd2' or 'hybrid')."""
    configs = []
    for lr in SWEEP_LR:
        for w3 in SWEEP_ENTROPY:
            if loss == "uce":
                configs.append(replace(base, lr=lr, w1=1.0, w2=0.0, w3=w3))
            elif loss == "uemd2":
                configs.append(replace(base, lr=lr, w1=0.0, w2=1.0, w3=w3))
            elif loss == "hybrid":
                configs.extend(replace(base, lr=lr, w1=1.0, w2=w2, w3=w3) for w2 in SWEEP_UEMD2)
            else:
                raise ValueError(f"unknown loss variant {loss!r}")
    return configs


def run_sweep(train_set, validation, configs, seeds=(0, 1, 2, 3, 4)):
    """Train every config for every seed; pick the config with the lowest seed-averaged validation EMD^2.

    Returns ``(best_models, rows)`` where ``best_models`` holds one model per seed.
    """
    rows = []
    best = None
    for ci, cfg in enumerate(configs):
        models = [train(train_set, replace(cfg, seed=s)) for s in seeds]
        scores = [validation_scores(m, validation) for m in models]
        mean_emd = float(np.mean([s.emd2 for s in scores]))
        mean_uce = float(np.mean([s.uce for s in scores]))
        rows.append({"config": ci, **cfg.to_dict(), "val_emd2": mean_emd, "val_uce": mean_uce,
                     "val_kl": float(np.mean([s.kl for s in scores]))})
        key = (mean_emd, mean_uce, ci)
        if best is None or key < best[0]:
            best = (key, models)
    return best[1], rows


# -- artifact I/O ---------------------------------------------------------


def model_to_dict(model: EvidentialModel) -> dict:
    cal = model.calibration
    return {
        "format": "evora-model",
        "version": ARTIFACT_VERSION,
        "n_bins": model.n_bins,
        "bin_edges": model.bin_edges.tolist(),
        "semantic_classes": list(model.semantic_classes),
        "budget_scale": model.budget_scale,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "calibration": None if cal is None else {"p_min": cal.p_min, "p_max": cal.p_max, "g_thres": cal.g_thres},
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "params": {k: np.asarray(v).tolist() for k, v in model.params.items()},
        "flow": {k: v.tolist() for k, v in model.flow.params().items()},
    }


def model_from_dict(data: dict) -> EvidentialModel:
    if data.get("format") != "evora-model":
        raise ValueError("not a model artifact")
    if data.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported model artifact version {data.get('version')}")
    cal = data["calibration"]
    flow = data["flow"]
    latent_dim = len(data["norm_mean"])
    return EvidentialModel(
        params={k: np.array(v, dtype=float) for k, v in data["params"].items()},
        flow=FlowModel(np.array(flow["z0"], dtype=float).reshape(-1, latent_dim), flow["alpha_raw"], flow["beta_raw"]),
        norm_mean=np.array(data["norm_mean"], dtype=float),
        norm_std=np.array(data["norm_std"], dtype=float),
        n_bins=int(data["n_bins"]),
        budget_scale=float(data["budget_scale"]),
        calibration=None if cal is None else ConfidenceCalibration(**cal),
        config=TrainConfig(**data["config"]),
        semantic_classes=tuple(data["semantic_classes"]),
    )


def save_model(model: EvidentialModel, path, extra: dict | None = None) -> None:
    data = model_to_dict(model)
    if extra:
        data["meta"] = extra
    Path(path).write_text(json.dumps(data))


def load_model(path) -> EvidentialModel:
    return model_from_dict(json.loads(Path(path).read_text()))
