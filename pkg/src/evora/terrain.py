"""Synthetic terrain, ground-truth traction, simulated data collection and OOD scoring.

Maps are stored as dense ``(rows, cols)`` arrays; cell ``(r, c)`` covers
``x in [c*res, (c+1)*res)`` and ``y in [r*res, (r+1)*res)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from evora.evidential import uniform_edges
from evora.model import SEMANTIC_CLASSES, TractionDataset, TractionSample, TerrainFeature, feature_matrix, predict_batch
from evora.flow import confidence_score

DIRT, VEGETATION = 0, 1
MAP_FORMAT_VERSION = 1
GT_HIGH, GT_LOW, GT_STD = 0.9, 0.1, 0.05
DIRT_SLOPE_DROP = 0.5


@dataclass(frozen=True)
class KindSpec:
    dirt_range: tuple[float, float]
    veg_range: tuple[float, float] | None
    dirt_max_slope: float
    veg_max_slope: float | None
    veg_ratio: float
    ood_ratio: float | None

    def elevation_range(self, semantic: int) -> tuple[float, float]:
        return self.dirt_range if semantic == DIRT else self.veg_range

    def max_slope(self, semantic: int) -> float:
        return self.dirt_max_slope if semantic == DIRT else self.veg_max_slope


KINDS = {
    "train": KindSpec((-0.2, 0.0), (0.3, 0.7), 0.3, 0.4, 0.2, None),
    "test": KindSpec((-0.3, 0.0), (0.5, 1.8), 0.7, 0.9, 0.3, None),
    "ood1": KindSpec((-0.5, 0.1), (0.4, 1.8), 0.7, 1.0, 0.3, 0.5),
    "ood2": KindSpec((-0.6, 2.0), None, 0.9, None, 0.0, 0.5),
}
DATASET_SIZES = {"train": 5, "test": 20, "ood1": 20, "ood2": 20}


@dataclass(frozen=True)
class TerrainConfig:
    kind: str = "train"
    rows: int = 60
    cols: int = 60
    resolution: float = 0.5
    n_bins: int = 20
    veg_ratio: float | None = None  # overrides the kind's ratio
    n_bumps: int = 16
    elevation_wavelength: tuple[float, float] = (8.0, 24.0)
    patch_wavelength: tuple[float, float] = (3.0, 8.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        ratio = self.spec.veg_ratio
        if not 0.0 <= ratio <= 1.0:
            raise ValueError(f"vegetation ratio {ratio} outside [0, 1]")
        if ratio > 0 and self.spec.veg_range is None:
            raise ValueError(f"kind {self.kind} has no vegetation elevation range")
        if self.rows < 3 or self.cols < 3 or self.resolution <= 0:
            raise ValueError("map must be at least 3x3 cells with positive resolution")

    @property
    def spec(self) -> KindSpec:
        base = KINDS[self.kind]
        return base if self.veg_ratio is None else replace(base, veg_ratio=self.veg_ratio)


@dataclass(frozen=True, eq=False)
class TerrainMap:
    semantic: np.ndarray
    elevation: np.ndarray
    slope: np.ndarray
    gt_lin: np.ndarray
    gt_ang: np.ndarray
    ood: np.ndarray
    resolution: float = 0.5
    kind: str = "train"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantic.shape

    @property
    def n_bins(self) -> int:
        return self.gt_lin.shape[-1]

    @property
    def extent(self) -> tuple[float, float]:
        """Width (x) and height (y) in metres."""
        return self.shape[1] * self.resolution, self.shape[0] * self.resolution

    def features(self) -> np.ndarray:
        return feature_matrix(self.elevation.ravel(), self.semantic.ravel())

    def feature(self, row: int, col: int) -> TerrainFeature:
        return TerrainFeature.from_class(float(self.elevation[row, col]), int(self.semantic[row, col]))


@dataclass(frozen=True, eq=False)
class PlanningMap:
    """Per-cell posterior-mean traction PMFs, confidence and extra stage penalty."""

    post_lin: np.ndarray
    post_ang: np.ndarray
    confidence: np.ndarray
    aux_penalty: np.ndarray
    resolution: float = 0.5
    semantic: np.ndarray | None = None
    elevation: np.ndarray | None = None

    def __post_init__(self):
        shape = self.confidence.shape
        if self.post_lin.shape[:2] != shape or self.post_ang.shape[:2] != shape or self.aux_penalty.shape != shape:
            raise ValueError("planning map layers disagree in shape")
        if np.any(self.aux_penalty < 0):
            raise ValueError("aux penalty must be non-negative")
        if not np.all(np.isfinite(self.confidence)):
            raise ValueError("confidence must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.confidence.shape

    @property
    def n_bins(self) -> int:
        return self.post_lin.shape[-1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.shape[1] * self.resolution, self.shape[0] * self.resolution


# -- generation -------------------------------------------------------------


def cosine_field(rng, rows, cols, resolution, n_bumps, wavelength):
    """Sum of randomly oriented cosine waves sampled at cell centres."""
    y = (np.arange(rows) + 0.5) * resolution
    x = (np.arange(cols) + 0.5) * resolution
    yy, xx = np.meshgrid(y, x, indexing="ij")
    out = np.zeros((rows, cols))
    for _ in range(n_bumps):
        lam = rng.uniform(*wavelength)
        theta = rng.uniform(0, 2 * math.pi)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.5, 1.0)
        k = 2 * math.pi / lam
        out += amp * np.cos(k * (math.cos(theta) * xx + math.sin(theta) * yy) + phase)
    return out


def slope_from_elevation(elevation, semantic, resolution):
    """Gradient magnitude by central differences over same-class neighbours.

    Where only one neighbour along an axis shares the cell's class (or the cell is
    on the border) a one-sided difference is used; with none the axis derivative is 0.
    Restricting to same-class neighbours keeps the step between dirt and vegetation
    elevations from registering as slope.
    """
    elevation = np.asarray(elevation, dtype=float)
    semantic = np.asarray(semantic)
    grads = []
    for axis in (0, 1):
        e = np.moveaxis(elevation, axis, 0)
        s = np.moveaxis(semantic, axis, 0)
        fwd_ok = np.zeros(e.shape, bool)
        bwd_ok = np.zeros(e.shape, bool)
        fwd_ok[:-1] = s[1:] == s[:-1]
        bwd_ok[1:] = s[:-1] == s[1:]
        fwd = np.zeros_like(e)
        bwd = np.zeros_like(e)
        fwd[:-1] = e[1:] - e[:-1]
        bwd[1:] = e[1:] - e[:-1]
        both = fwd_ok & bwd_ok
        g = np.where(both, (fwd + bwd) / (2 * resolution), 0.0)
        g = np.where(fwd_ok & ~bwd_ok, fwd / resolution, g)
        g = np.where(bwd_ok & ~fwd_ok, bwd / resolution, g)
        grads.append(np.moveaxis(g, 0, axis))
    return np.hypot(*grads)


def _quantile_map(u, lo, hi, inner, fraction):
    """Map quantiles ``u`` in [0, 1] monotonically onto [lo, hi].

    ``fraction`` of the quantile mass lands in ``inner`` (a sub-interval of [lo, hi]);
    the rest is split between the two outer pieces in proportion to their length.
    """
    if inner is None:
        return lo + (hi - lo) * u
    ilo, ihi = inner
    below, above = ilo - lo, hi - ihi
    if below + above <= 0:
        return lo + (hi - lo) * u
    a = (1.0 - fraction) * below / (below + above)
    b = a + fraction
    xs = [0.0, a, b, 1.0]
    ys = [lo, ilo, ihi, hi]
    return np.interp(u, xs, ys)


def _intersect(r1, r2):
    lo, hi = max(r1[0], r2[0]), min(r1[1], r2[1])
    return (lo, hi) if hi > lo else None


def ood_mask(semantic, elevation, slope, reference: KindSpec = KINDS["train"]):
    """Cells whose elevation or slope falls outside the reference (training) ranges."""
    out = np.zeros(semantic.shape, bool)
    for cls in (DIRT, VEGETATION):
        rng_ = reference.elevation_range(cls)
        sel = semantic == cls
        if rng_ is None:
            out |= sel
            continue
        bad = (elevation < rng_[0]) | (elevation > rng_[1]) | (slope > reference.max_slope(cls))
        out |= sel & bad
    return out


def _build_elevation(base_field, semantic, spec: KindSpec, resolution, fraction):
    elevation = np.zeros(semantic.shape)
    train = KINDS["train"]
    for cls in (DIRT, VEGETATION):
        sel = semantic == cls
        if not sel.any():
            continue
        lo, hi = spec.elevation_range(cls)
        vals = base_field[sel]
        u = (rankdata(vals) - 1) / max(len(vals) - 1, 1)
        inner = _intersect((lo, hi), train.elevation_range(cls)) if spec.ood_ratio is not None else None
        elevation[sel] = _quantile_map(u, lo, hi, inner, fraction)
    # slope clamp: first shrink the part of each class lying outside the training band,
    # then, if that is not enough, shrink the whole class towards the middle of its range
    for cls in (DIRT, VEGETATION):
        sel = semantic == cls
        if not sel.any():
            continue
        limit = spec.max_slope(cls)
        lo, hi = spec.elevation_range(cls)
        inner = _intersect((lo, hi), train.elevation_range(cls)) if spec.ood_ratio is not None else None
        for _ in range(60 if inner is not None else 0):
            if slope_from_elevation(elevation, semantic, resolution)[sel].max() <= limit:
                break
            vals = elevation[sel]
            band = np.clip(vals, *inner)
            elevation[sel] = band + 0.9 * (vals - band)
        steepest = slope_from_elevation(elevation, semantic, resolution)[sel].max()
        if steepest > limit:
            mid = 0.5 * (lo + hi)
            elevation[sel] = mid + (elevation[sel] - mid) * (limit / steepest) * (1 - 1e-9)
    return elevation


def binned_normal_pmf(mean: float, n_bins: int = 20, std: float = GT_STD) -> np.ndarray:
    """Normal(mean, std) mass per traction bin, renormalised to [0, 1]."""
    edges = uniform_edges(n_bins)
    mass = ndtr((edges[1:] - mean) / std) - ndtr((edges[:-1] - mean) / std)
    return mass / mass.sum()


def gt_traction_dist(semantic: int, elevation: float, slope: float, spec: KindSpec, n_bins: int = 20):
    """Ground-truth traction PMF (identical for linear and angular)."""

    def binned(mean):
        return binned_normal_pmf(mean, n_bins)

    if semantic == DIRT:
        steep = min(max(slope / spec.dirt_max_slope, 0.0), 1.0)
        pmf = binned(GT_HIGH - DIRT_SLOPE_DROP * steep)
    else:
        lo, hi = spec.veg_range
        w = min(max((elevation - lo) / (hi - lo), 0.0), 1.0)
        pmf = w * binned(GT_HIGH) + (1 - w) * binned(GT_LOW)
        pmf = pmf / pmf.sum()
    return pmf, pmf.copy()


def gen_terrain(cfg: TerrainConfig, seed: int) -> TerrainMap:
    spec = cfg.spec
    rng = np.random.default_rng([seed, 7])
    rows, cols = cfg.rows, cfg.cols
    patch_field = cosine_field(rng, rows, cols, cfg.resolution, cfg.n_bumps, cfg.patch_wavelength)
    base_field = cosine_field(rng, rows, cols, cfg.resolution, cfg.n_bumps, cfg.elevation_wavelength)

    n_veg = int(round(spec.veg_ratio * rows * cols))
    semantic = np.zeros(rows * cols, dtype=np.int64)
    if n_veg:
        semantic[np.argsort(-patch_field.ravel(), kind="stable")[:n_veg]] = VEGETATION
    semantic = semantic.reshape(rows, cols)

    if spec.ood_ratio is None:
        elevation = _build_elevation(base_field, semantic, spec, cfg.resolution, 1.0)
    else:
        # the OOD share falls as more of each class is mapped inside the training range
        lo_f, hi_f = 0.0, 1.0
        best = None
        for _ in range(40):
            f = 0.5 * (lo_f + hi_f)
            elevation = _build_elevation(base_field, semantic, spec, cfg.resolution, f)
            slope = slope_from_elevation(elevation, semantic, cfg.resolution)
            ratio = ood_mask(semantic, elevation, slope).mean()
            if best is None or abs(ratio - spec.ood_ratio) < best[0]:
                best = (abs(ratio - spec.ood_ratio), elevation)
            if ratio > spec.ood_ratio:
                lo_f = f
            else:
                hi_f = f
        elevation = best[1]

    slope = slope_from_elevation(elevation, semantic, cfg.resolution)
    gt = np.zeros((rows, cols, cfg.n_bins))
    for r in range(rows):
        for c in range(cols):
            gt[r, c] = gt_traction_dist(int(semantic[r, c]), elevation[r, c], slope[r, c], spec, cfg.n_bins)[0]
    return TerrainMap(
        semantic=semantic,
        elevation=elevation,
        slope=slope,
        gt_lin=gt,
        gt_ang=gt.copy(),
        ood=ood_mask(semantic, elevation, slope),
        resolution=cfg.resolution,
        kind=cfg.kind,
        seed=seed,
        meta={
            "gt_high": GT_HIGH,
            "gt_low": GT_LOW,
            "gt_std": GT_STD,
            "dirt_slope_drop": DIRT_SLOPE_DROP,
            "kind_spec": {k: v for k, v in spec.__dict__.items()},
        },
    )


def gen_dataset(kind: str, count: int | None = None, seed: int = 0, **overrides) -> list[TerrainMap]:
    count = DATASET_SIZES[kind] if count is None else count
    cfg = TerrainConfig(kind=kind, **overrides)
    offset = {"train": 0, "test": 1000, "ood1": 2000, "ood2": 3000}[kind]
    return [gen_terrain(cfg, seed * 10_000 + offset + i) for i in range(count)]


# -- data collection -------------------------------------------------------


@dataclass(frozen=True)
class CollectionPath:
    waypoints: np.ndarray
    samples_per_cell: int = 2

    def cells(self, terrain: TerrainMap, step: float | None = None) -> list[tuple[int, int]]:
        """Distinct cells visited along the polyline, in visiting order."""
        width, height = terrain.extent
        pts = np.asarray(self.waypoints, dtype=float)
        if np.any(pts < 0) or np.any(pts[:, 0] >= width) or np.any(pts[:, 1] >= height):
            raise ValueError("collection path leaves the map")
        step = terrain.resolution / 4 if step is None else step
        seen, order = set(), []
        for a, b in zip(pts[:-1], pts[1:]):
            n = max(int(math.ceil(np.linalg.norm(b - a) / step)), 1)
            for t in np.linspace(0.0, 1.0, n + 1):
                x, y = a + t * (b - a)
                cell = (int(y // terrain.resolution), int(x // terrain.resolution))
                if cell not in seen:
                    seen.add(cell)
                    order.append(cell)
        return order


def circular_path(terrain: TerrainMap, radius: float | None = None, n_points: int = 200, samples_per_cell: int = 2):
    width, height = terrain.extent
    radius = min(width, height) / 3 if radius is None else radius
    t = np.linspace(0, 2 * math.pi, n_points + 1)
    pts = np.column_stack([width / 2 + radius * np.cos(t), height / 2 + radius * np.sin(t)])
    return CollectionPath(pts, samples_per_cell)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Columnar traction samples; iterating yields ``TractionSample`` objects."""

    rows: np.ndarray
    cols: np.ndarray
    elevation: np.ndarray
    semantic: np.ndarray
    psi_lin: np.ndarray
    psi_ang: np.ndarray

    def __len__(self):
        return len(self.psi_lin)

    def __iter__(self):
        for i in range(len(self)):
            yield TractionSample(
                TerrainFeature.from_class(float(self.elevation[i]), int(self.semantic[i])),
                float(self.psi_lin[i]),
                float(self.psi_ang[i]),
                (int(self.rows[i]), int(self.cols[i])),
            )

    def select(self, mask) -> "SampleSet":
        return SampleSet(*(getattr(self, f)[mask] for f in ("rows", "cols", "elevation", "semantic", "psi_lin", "psi_ang")))

    @staticmethod
    def concat(parts) -> "SampleSet":
        fields = ("rows", "cols", "elevation", "semantic", "psi_lin", "psi_ang")
        return SampleSet(*(np.concatenate([getattr(p, f) for p in parts]) for f in fields))

    def to_dataset(self, n_bins: int, map_id: int = 0) -> TractionDataset:
        """Per-cell empirical PMFs weighted by their sample counts."""
        if len(self) == 0:
            return TractionDataset(np.zeros((0, 1 + len(SEMANTIC_CLASSES))), np.zeros((0, n_bins)), np.zeros((0, n_bins)), np.zeros(0))
        key = self.rows.astype(np.int64) * 1_000_000 + self.cols
        uniq, first, inverse, counts = np.unique(key, return_index=True, return_inverse=True, return_counts=True)
        y = []
        for psi in (self.psi_lin, self.psi_ang):
            b = np.minimum((psi * n_bins).astype(np.int64), n_bins - 1)
            hist = np.zeros((len(uniq), n_bins))
            np.add.at(hist, (inverse, b), 1.0)
            y.append(hist / counts[:, None])
        feats = feature_matrix(self.elevation[first], self.semantic[first])
        cells = np.column_stack([np.full(len(uniq), map_id), self.rows[first], self.cols[first]])
        return TractionDataset(feats, y[0], y[1], counts.astype(float), cells)


def _draw(pmf, n, rng, edges):
    bins = rng.choice(len(pmf), size=n, p=pmf)
    lo, hi = edges[bins], edges[bins + 1]
    return lo + (hi - lo) * rng.random(n)


def simulate_collection(terrain: TerrainMap, path: CollectionPath, multiplier: int = 1, seed: int = 0) -> SampleSet:
    """Draw ``samples_per_cell * multiplier`` i.i.d. traction pairs in every visited cell."""
    rng = np.random.default_rng([seed, terrain.seed, 11])
    edges = uniform_edges(terrain.n_bins)
    n = path.samples_per_cell * multiplier
    parts = []
    for r, c in path.cells(terrain):
        lin = _draw(terrain.gt_lin[r, c], n, rng, edges)
        ang = _draw(terrain.gt_ang[r, c], n, rng, edges)
        parts.append((r, c, lin, ang))
    if not parts:
        return SampleSet(*(np.zeros(0, dtype=t) for t in (np.int64, np.int64, float, np.int64, float, float)))
    rows = np.concatenate([np.full(n, p[0]) for p in parts])
    cols = np.concatenate([np.full(n, p[1]) for p in parts])
    return SampleSet(
        rows,
        cols,
        terrain.elevation[rows, cols],
        terrain.semantic[rows, cols],
        np.concatenate([p[2] for p in parts]),
        np.concatenate([p[3] for p in parts]),
    )


def split_halves(samples: SampleSet, terrain: TerrainMap) -> tuple[SampleSet, SampleSet]:
    """Left half of the map for training, right half for validation."""
    left = samples.cols < terrain.shape[1] // 2
    return samples.select(left), samples.select(~left)


def collect_training_data(maps, multiplier: int = 1, seed: int = 0, n_bins: int = 20, samples_per_cell: int = 2):
    """Training and validation datasets pooled over the given maps."""
    train_parts, val_parts = [], []
    for i, terrain in enumerate(maps):
        samples = simulate_collection(terrain, circular_path(terrain, samples_per_cell=samples_per_cell), multiplier, seed)
        left, right = split_halves(samples, terrain)
        train_parts.append(left.to_dataset(n_bins, i))
        val_parts.append(right.to_dataset(n_bins, i))
    return TractionDataset.concat(train_parts), TractionDataset.concat(val_parts)


# -- prediction and OOD metrics ------------------------------------------


def predict_map(model, terrain: TerrainMap) -> PlanningMap:
    beta_lin, beta_ang, _, logp = predict_batch(model, terrain.features())
    rows, cols = terrain.shape
    post_lin = (beta_lin / beta_lin.sum(axis=1, keepdims=True)).reshape(rows, cols, -1)
    post_ang = (beta_ang / beta_ang.sum(axis=1, keepdims=True)).reshape(rows, cols, -1)
    conf = confidence_score(np.exp(logp), model.calibration).reshape(rows, cols)
    return PlanningMap(
        post_lin,
        post_ang,
        conf,
        np.zeros((rows, cols)),
        terrain.resolution,
        terrain.semantic.copy(),
        terrain.elevation.copy(),
    )


def gt_planning_map(terrain: TerrainMap) -> PlanningMap:
    """Planning map carrying the true PMFs: the oracle that learned maps are compared against."""
    return PlanningMap(
        terrain.gt_lin.copy(),
        terrain.gt_ang.copy(),
        np.ones(terrain.shape),
        np.zeros(terrain.shape),
        terrain.resolution,
        terrain.semantic.copy(),
        terrain.elevation.copy(),
    )


def auc_roc(scores, labels) -> float:
    """Probability that a positive outscores a negative (ties count half)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision: precision summed over recall increments, tied scores grouped."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("AUC needs both positive and negative labels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def ood_detection_metrics(planning: PlanningMap, terrain: TerrainMap) -> tuple[float, float]:
    if planning.shape != terrain.shape:
        raise ValueError("maps are not aligned")
    scores = -planning.confidence
    return auc_roc(scores, terrain.ood), auc_pr(scores, terrain.ood)


# -- serialisation -------------------------------------------------------------


def _header(kind, rows, cols, resolution, n_bins):
    return {
        "version": MAP_FORMAT_VERSION,
        "kind": kind,
        "width": cols,
        "height": rows,
        "resolution": resolution,
        "bins": n_bins,
        "semantic_table": list(SEMANTIC_CLASSES),
    }


def terrain_to_dict(terrain: TerrainMap) -> dict:
    rows, cols = terrain.shape
    head = _header("terrain", rows, cols, terrain.resolution, terrain.n_bins)
    head.update(terrain_kind=terrain.kind, seed=terrain.seed, meta=terrain.meta)
    cells = [
        {
            "semantic": int(terrain.semantic[r, c]),
            "elevation": float(terrain.elevation[r, c]),
            "slope": float(terrain.slope[r, c]),
            "gt_lin": terrain.gt_lin[r, c].tolist(),
            "gt_ang": terrain.gt_ang[r, c].tolist(),
            "ood": bool(terrain.ood[r, c]),
        }
        for r in range(rows)
        for c in range(cols)
    ]
    return {"header": head, "cells": cells}


def _check_header(head, kind):
    if head.get("version") != MAP_FORMAT_VERSION or head.get("kind") != kind:
        raise ValueError(f"not a version {MAP_FORMAT_VERSION} {kind} map")


def terrain_from_dict(data: dict) -> TerrainMap:
    head = data["header"]
    _check_header(head, "terrain")
    rows, cols = head["height"], head["width"]
    cells = data["cells"]
    if len(cells) != rows * cols:
        raise ValueError("cell count does not match map dimensions")

    def grid(key, dtype=float):
        arr = np.array([cell[key] for cell in cells], dtype=dtype)
        return arr.reshape(rows, cols, -1) if arr.ndim == 2 else arr.reshape(rows, cols)

    return TerrainMap(
        semantic=grid("semantic", np.int64),
        elevation=grid("elevation"),
        slope=grid("slope"),
        gt_lin=grid("gt_lin"),
        gt_ang=grid("gt_ang"),
        ood=grid("ood", bool),
        resolution=head["resolution"],
        kind=head["terrain_kind"],
        seed=head["seed"],
        meta=head.get("meta", {}),
    )


def planning_to_dict(planning: PlanningMap) -> dict:
    rows, cols = planning.shape
    head = _header("planning", rows, cols, planning.resolution, planning.n_bins)
    cells = []
    for r in range(rows):
        for c in range(cols):
            cell = {
                "post_lin": planning.post_lin[r, c].tolist(),
                "post_ang": planning.post_ang[r, c].tolist(),
                "confidence": float(planning.confidence[r, c]),
                "aux_penalty": float(planning.aux_penalty[r, c]),
            }
            if planning.semantic is not None:
                cell["semantic"] = int(planning.semantic[r, c])
            if planning.elevation is not None:
                cell["elevation"] = float(planning.elevation[r, c])
            cells.append(cell)
    return {"header": head, "cells": cells}


def planning_from_dict(data: dict) -> PlanningMap:
    head = data["header"]
    _check_header(head, "planning")
    rows, cols = head["height"], head["width"]
    cells = data["cells"]
    if len(cells) != rows * cols:
        raise ValueError("cell count does not match map dimensions")
    vec = lambda k: np.array([c[k] for c in cells], dtype=float).reshape(rows, cols, -1)  # noqa: E731
    scal = lambda k, t=float: np.array([c[k] for c in cells], dtype=t).reshape(rows, cols)  # noqa: E731
    return PlanningMap(
        vec("post_lin"),
        vec("post_ang"),
        scal("confidence"),
        scal("aux_penalty"),
        head["resolution"],
        scal("semantic", np.int64) if "semantic" in cells[0] else None,
        scal("elevation") if "elevation" in cells[0] else None,
    )


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj))


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_samples_jsonl(samples: SampleSet, path, extra: dict | None = None) -> None:
    """One JSON record per sample; ``extra`` keys (e.g. a manifest id) are copied into every record."""
    extra = extra or {}
    with open(path, "w") as fh:
        for i in range(len(samples)):
            fh.write(json.dumps({
                **extra,
                "elevation": float(samples.elevation[i]),
                "semantic": int(samples.semantic[i]),
                "psi_lin": float(samples.psi_lin[i]),
                "psi_ang": float(samples.psi_ang[i]),
                "cell_row": int(samples.rows[i]),
                "cell_col": int(samples.cols[i]),
            }) + "\n")


def load_samples_jsonl(path) -> SampleSet:
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    col = lambda k, t: np.array([r[k] for r in recs], dtype=t)  # noqa: E731
    out = SampleSet(
        col("cell_row", np.int64), col("cell_col", np.int64), col("elevation", float),
        col("semantic", np.int64), col("psi_lin", float), col("psi_ang", float),
    )
    if len(out) and (out.psi_lin.min() < 0 or out.psi_lin.max() > 1 or out.psi_ang.min() < 0 or out.psi_ang.max() > 1):
        raise ValueError("traction samples outside [0, 1]")
    return out
