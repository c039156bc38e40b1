#!/usr/bin/env python3
"""
Analysis
Measurement instruments for trained networks: loss reconstruction from linear SGs,
loss-surface grids, representational dissimilarity matrices, linear probes and
weight-norm profiles

All instruments read networks in eval mode and never modify them.
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import spearmanr

from dni_lab.data import GridDataset, one_hot
from dni_lab.errors import ShapeError, UnsupportedModuleError, ValidationError
from dni_lab.linalg import Matrix, Rng
from dni_lab.network import LogLoss, MSELoss, Network, OptimizerBank, accuracy
from dni_lab.sg_modules import LinearSG, SGModule

logger = logging.getLogger(__name__)


def layer_activations(net: Network, X: Matrix) -> List[Matrix]:
    """Eval-mode activations at hidden boundaries 1..N-1"""
    return net.forward(X, "eval").boundaries[1:-1]


# ---------------------------------------------------------------------------
# Loss reconstruction
# ---------------------------------------------------------------------------

def reconstruct_loss(sg: SGModule, h: Matrix, y: Matrix) -> np.ndarray:
    """
    Per-row 1/2 h A h^T + (y B + C) h^T implied by a linear SG (constant dropped)

    Raises:
        UnsupportedModuleError: sg is not in the linear family
    """
    if not isinstance(sg, LinearSG):
        raise UnsupportedModuleError(f"loss reconstruction needs a linear SG, got {sg.kind}")
    sg.check_inputs(h, y)
    linear = np.zeros_like(h) + sg.C
    if sg.uses_y:
        linear = linear + y @ sg.B
    value = np.sum(linear * h, axis=1)
    if sg.uses_h:
        value = value + 0.5 * np.sum((h @ sg.A) * h, axis=1)
    return value


@dataclass
class LossSurface:
    iteration: int
    coords: Matrix
    true_loss: np.ndarray
    reconstructed: Dict[int, np.ndarray] = field(default_factory=dict)


def loss_surface_snapshot(trainer, X: Matrix, Y: Matrix, iteration: int) -> LossSurface:
    fp = trainer.net.forward(X, "eval")
    true_loss = trainer.loss.per_sample(fp.output, Y)
    reconstructed = {k: reconstruct_loss(sg, fp.boundaries[k], Y) for k, sg in trainer.sgs.items()}
    return LossSurface(iteration, X.copy(), true_loss, reconstructed)


def loss_surface_experiment(trainer, grid: GridDataset, snapshots: Sequence[int]) -> List[LossSurface]:
    """
    Train on the grid, recording true and reconstructed per-point losses

    A snapshot at iteration t is taken after t training steps (t=0 is the initial network).
    """
    data = grid.dataset
    if data.d != 2:
        raise ShapeError("loss surfaces need 2-D inputs", data.X.shape)
    wanted = sorted(set(int(s) for s in snapshots))
    if not wanted or wanted[0] < 0:
        raise ValidationError("snapshots must be non-negative iterations")
    surfaces = []
    start = trainer.iteration
    for t in range(start, wanted[-1] + 1):
        if t in wanted:
            surfaces.append(loss_surface_snapshot(trainer, data.X, data.Y, t))
        if t < wanted[-1]:
            idx = trainer.batch_indices(t, data.n)
            trainer.step(data.X[idx], data.Y[idx])
    logger.info(f"Recorded {len(surfaces)} loss surfaces over {wanted[-1] - start} iterations")
    return surfaces


def rank_correlation(values, index=None) -> float:
    """Spearman correlation (0.0 when either side is constant)"""
    values = np.asarray(values, dtype=np.float64).ravel()
    index = np.arange(values.size) if index is None else np.asarray(index, dtype=np.float64).ravel()
    if values.size < 2 or np.all(values == values[0]) or np.all(index == index[0]):
        return 0.0
    return float(spearmanr(values, index)[0])


def surface_fidelity(surface: LossSurface) -> Dict[int, float]:
    return {k: rank_correlation(recon, surface.true_loss) for k, recon in surface.reconstructed.items()}


def write_loss_surfaces_csv(surfaces: Sequence[LossSurface], path: str) -> str:
    if not surfaces:
        raise ValidationError("no loss surfaces to write")
    keys = sorted(surfaces[0].reconstructed)
    rows = [["iteration", "x", "y", "true"] + [f"recon_{k}" for k in keys]]
    for surface in surfaces:
        for i, (x, y) in enumerate(surface.coords):
            rows.append([surface.iteration, repr(float(x)), repr(float(y)), repr(float(surface.true_loss[i]))]
                        + [repr(float(surface.reconstructed[k][i])) for k in keys])
    return write_rows(path, rows)


# ---------------------------------------------------------------------------
# Representational dissimilarity
# ---------------------------------------------------------------------------

def compute_rdm(activations: Matrix) -> Matrix:
    """1 - Pearson correlation between rows; constant rows count as uncorrelated"""
    activations = np.asarray(activations, dtype=np.float64)
    if activations.ndim != 2 or activations.shape[1] < 2:
        raise ShapeError("RDM needs activations with at least 2 columns", activations.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        distances = pdist(activations, "correlation")
    distances = np.clip(np.nan_to_num(distances, nan=1.0), 0.0, 2.0)
    constant = np.all(activations == activations[:, :1], axis=1)
    if constant.any():
        logger.warning(f"{int(constant.sum())} constant activation rows; treating their correlation as 0")
    return squareform(distances, checks=False)


def within_class_mask(labels) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    mask = labels[:, None] == labels[None, :]
    np.fill_diagonal(mask, False)
    return mask


def rdm_summary(rdm: Matrix, labels) -> Dict[str, float]:
    """Mean within-class and between-class dissimilarity"""
    within = within_class_mask(labels)
    between = ~within
    np.fill_diagonal(between, False)
    return {"within": float(rdm[within].mean()) if within.any() else 0.0,
            "between": float(rdm[between].mean()) if between.any() else 0.0}


def rdm_distance_profile(rdms: Sequence[Matrix], labels) -> List[float]:
    """L2 distance between each layer's within-class block entries and the final layer's"""
    if not rdms:
        raise ValidationError("need at least one RDM")
    mask = within_class_mask(labels)
    final = rdms[-1][mask]
    return [float(np.linalg.norm(rdm[mask] - final)) for rdm in rdms]


def profile_plateaus(profile: Sequence[float], split: int = 8, ratio: float = 0.25) -> bool:
    """True when the deep part of the profile drops below ratio * the shallow part's peak"""
    profile = list(profile)
    if len(profile) <= split + 1:
        raise ValidationError(f"profile needs more than {split + 1} layers")
    return min(profile[split:-1]) < ratio * max(profile[:split])


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    layer: int
    accuracy: Optional[float] = None
    mse: Optional[float] = None
    degenerate: bool = False


def _standardize(features: Matrix) -> Matrix:
    std = features.std(axis=0, keepdims=True)
    if np.all(std == 0.0):
        logger.warning(f"Probe features are constant ({features.shape[1]} columns)")
    return (features - features.mean(axis=0, keepdims=True)) / np.where(std > 0.0, std, 1.0)


def _fit_linear(features: Matrix, targets: Matrix, loss, steps: int, lr: float, seed: int,
                batch_size: Optional[int]) -> Matrix:
    """Adam fit of features @ W + b on frozen features; returns final predictions"""
    n, d = features.shape
    params = {"W": np.zeros((d, targets.shape[1])), "b": np.zeros((1, targets.shape[1]))}
    bank = OptimizerBank(lr)
    rng = Rng(seed)
    for step in range(steps):
        if batch_size and batch_size < n:
            idx = rng.child(step).choice(n, batch_size, replace=False)
            F, T = features[idx], targets[idx]
        else:
            F, T = features, targets
        G = loss.backward(F @ params["W"] + params["b"], T)
        bank.apply(params, {"W": F.T @ G, "b": G.sum(axis=0, keepdims=True)})
    return features @ params["W"] + params["b"]


def linear_probe_classifier(activations: Matrix, labels, n_classes: Optional[int] = None, steps: int = 2000,
                            lr: float = 1e-3, seed: int = 0, batch_size: Optional[int] = None) -> float:
    """Train accuracy of a softmax-linear classifier on standardized frozen activations"""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    Y = one_hot(labels, n_classes or int(labels.max()) + 1)
    features = _standardize(np.asarray(activations, dtype=np.float64))
    return accuracy(_fit_linear(features, Y, LogLoss(), steps, lr, seed, batch_size), Y)


def linear_probe_regressor(activations: Matrix, inputs: Matrix, steps: int = 2000, lr: float = 1e-3,
                           seed: int = 0, batch_size: Optional[int] = None) -> float:
    """MSE of a linear regression from frozen activations back to the network input"""
    features = _standardize(np.asarray(activations, dtype=np.float64))
    loss = MSELoss()
    return loss.forward(_fit_linear(features, inputs, loss, steps, lr, seed, batch_size), inputs)


def probe_layers(net: Network, X: Matrix, labels, steps: int = 2000, lr: float = 1e-3,
                 regress: bool = False, batch_size: Optional[int] = None) -> List[ProbeResult]:
    results = []
    for layer, acts in enumerate(layer_activations(net, X), start=1):
        result = ProbeResult(layer, degenerate=bool(np.all(acts.std(axis=0) == 0.0)))
        result.accuracy = linear_probe_classifier(acts, labels, steps=steps, lr=lr, batch_size=batch_size)
        if regress:
            result.mse = linear_probe_regressor(acts, X, steps=steps, lr=lr, batch_size=batch_size)
        logger.info(f"probe layer {layer}: accuracy={result.accuracy:.4f}"
                    + (f" mse={result.mse:.6f}" if result.mse is not None else ""))
        results.append(result)
    return results


# ---------------------------------------------------------------------------
# Weight norms
# ---------------------------------------------------------------------------

def weight_norm_profile(net: Network, include_output: bool = False) -> np.ndarray:
    """Squared Frobenius norms of the dense weights, normalized to sum to 1"""
    layers = net.dense_layers()
    if not include_output and len(layers) > 1:
        layers = layers[:-1]
    norms = np.array([float(np.sum(layer.W * layer.W)) for layer in layers])
    total = norms.sum()
    if total == 0.0:
        raise ValidationError("all dense weights are zero")
    return norms / total


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------

def write_rows(path: str, rows: List[list]) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerows(rows)
    except OSError as e:
        raise OSError(f"Could not write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def write_matrix_csv(matrix: Matrix, path: str) -> str:
    """Header c0..c{n-1}, one row per matrix row"""
    rows = [[f"c{j}" for j in range(matrix.shape[1])]]
    rows.extend([repr(float(v)) for v in row] for row in matrix)
    return write_rows(path, rows)


def write_profile_csv(values: Sequence[float], path: str, column: str = "value") -> str:
    rows = [["layer", column]] + [[i, repr(float(v))] for i, v in enumerate(values, start=1)]
    return write_rows(path, rows)


def write_probe_csv(results: Sequence[ProbeResult], path: str) -> str:
    rows = [["layer", "accuracy", "mse", "degenerate"]]
    for r in results:
        rows.append([r.layer, "" if r.accuracy is None else repr(r.accuracy),
                     "" if r.mse is None else repr(r.mse), int(r.degenerate)])
    return write_rows(path, rows)


def write_dict_rows(records: Sequence[Dict], columns: Sequence[str], path: str) -> str:
    """One row per record; floats via repr, missing values empty"""
    rows = [list(columns)]
    for record in records:
        rows.append(["" if record.get(c) is None else
                     repr(float(record[c])) if isinstance(record[c], float) else record[c] for c in columns])
    return write_rows(path, rows)
