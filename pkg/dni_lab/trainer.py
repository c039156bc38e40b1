#!/usr/bin/env python3
"""
Trainer
Locked backprop, decoupled single-SG and every-layer-SG training, conspiring-method training,
and the experiment runner with metrics logging and checkpointing

Every step follows snapshot semantics: all gradients (main network and SG targets) are
computed from the pre-step parameters, then the updates are applied. Signals and SG targets
are per-sample gradients; they are divided by the batch size before backpropagation so the
main network sees batch-mean gradients.
"""

import logging
import math
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dni_lab.checkpoint import load_checkpoint, save_checkpoint
from dni_lab.data import Dataset, generate, replicate_seeds
from dni_lab.errors import CheckpointError, NonFiniteError, ShapeError, ValidationError
from dni_lab.linalg import Matrix, Rng, frobenius_norm
from dni_lab.metrics_recorder import MetricsRecorder
from dni_lab.network import (
    ACTIVATIONS,
    BLOCK_ORDERS,
    AdamState,
    ForwardPass,
    LOSSES,
    OptimizerBank,
    accuracy,
    build_loss,
    build_network,
)
from dni_lab.sg_modules import (
    SG_KINDS,
    SGModule,
    Variant,
    build_method,
    build_sg,
    conspiring_signal,
)

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.dnickpt"
UPDATE_GROUPS = ("lower", "upper", "sg")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture, loss, SG placement and gradient method of one model"""
    layer_dims: Tuple[int, ...]
    activation: str = "relu"
    batchnorm: bool = False
    loss: str = "mse"
    sg_insertions: Union[str, Tuple[int, ...]] = "none"
    sg_kind: str = "linear"
    method: str = "backprop"
    sgprop_alpha: float = 1.0
    fixed_init: str = "gaussian"
    block_order: str = "bn_before_activation"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if not isinstance(self.sg_insertions, str):
            object.__setattr__(self, "sg_insertions", tuple(int(k) for k in self.sg_insertions))

    @property
    def n_blocks(self) -> int:
        return len(self.layer_dims) - 1

    def insertion_points(self) -> Tuple[int, ...]:
        """Resolve 'none' / 'single' / 'all' / explicit boundaries to a sorted tuple"""
        n = self.n_blocks
        if self.sg_insertions == "none":
            return ()
        if self.sg_insertions == "single":
            return (max(1, math.ceil(n / 2)),)
        if self.sg_insertions == "all":
            return tuple(range(1, n)) if n > 1 else (n,)
        if isinstance(self.sg_insertions, str):
            raise ValidationError(f"Unsupported sg_insertions: {self.sg_insertions}")
        points = tuple(sorted(set(self.sg_insertions)))
        if any(not 1 <= k <= n for k in points):
            raise ValidationError(f"SG insertions must lie in [1, {n}], got {list(self.sg_insertions)}")
        return points

    def validate(self) -> "NetworkSpec":
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValidationError(f"layer_dims must list at least two positive sizes, got {list(self.layer_dims)}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"Unsupported activation: {self.activation}")
        if self.loss not in LOSSES:
            raise ValidationError(f"Unsupported loss: {self.loss}")
        if self.sg_kind not in SG_KINDS:
            raise ValidationError(f"Unsupported SG kind: {self.sg_kind}")
        if self.block_order not in BLOCK_ORDERS:
            raise ValidationError(f"Unsupported block order: {self.block_order}")
        try:
            variant = Variant(self.method)
        except ValueError:
            raise ValidationError(f"Unsupported method: {self.method}")
        points = self.insertion_points()
        if variant in (Variant.SG, Variant.SGPROP) and not points:
            raise ValidationError(f"method {self.method} needs at least one SG insertion")
        if variant not in (Variant.SG, Variant.SGPROP) and points:
            raise ValidationError(f"method {self.method} does not use SG insertions")
        return self


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 50
    lr_main: float = 3e-5
    lr_sg: float = 3e-5
    seed: int = 0
    l2_penalty: float = 0.0
    eps_tracking_monitor: bool = False
    log_every: int = 100
    checkpoint_every: int = 0
    grad_tol: float = 1e-6

    def validate(self) -> "TrainConfig":
        if self.iterations < 1 or self.batch_size < 1:
            raise ValidationError("iterations and batch_size must be positive")
        if self.lr_main <= 0.0 or self.lr_sg <= 0.0:
            raise ValidationError("learning rates must be positive")
        if self.l2_penalty < 0.0 or self.grad_tol < 0.0:
            raise ValidationError("l2_penalty and grad_tol must be >= 0")
        if self.log_every < 1 or self.checkpoint_every < 0:
            raise ValidationError("log_every must be >= 1 and checkpoint_every >= 0")
        return self


@dataclass
class ExperimentRecord:
    """One metrics row per logging interval"""
    iteration: int
    batch_loss: float
    train_loss: float
    train_accuracy: float
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    sg_losses: Dict[str, float] = field(default_factory=dict)
    eps_ratio: Optional[float] = None
    sg_error_norm: Optional[float] = None
    backprop_sg_error_norm: Optional[float] = None
    lower_grad_norm: Optional[float] = None
    grad_norm: Optional[float] = None
    weight_norms: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class StepPlan:
    """Everything one step will apply, computed from pre-step parameters"""
    forward: ForwardPass
    grads: Dict[str, Matrix]
    sg_batches: Dict[int, Tuple[Matrix, Matrix, Matrix]] = field(default_factory=dict)
    metrics: Dict = field(default_factory=dict)


def _norm(grads: Dict[str, Matrix]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class Trainer:
    """Owns one network, its SG modules, gradient method and optimizer state"""

    def __init__(self, spec: NetworkSpec, config: TrainConfig):
        self.spec = spec.validate()
        self.config = config.validate()
        rng = Rng(config.seed)
        self.rng = rng
        self.net = build_network(spec.layer_dims, rng.child(0), spec.activation, spec.batchnorm, spec.block_order)
        self.loss = build_loss(spec.loss)
        self.method = build_method(spec.method, spec.layer_dims, rng.child(2), spec.sgprop_alpha, spec.fixed_init)
        self.insertions = spec.insertion_points()
        dims = spec.layer_dims
        self.sgs: "OrderedDict[int, SGModule]" = OrderedDict(
            (k, build_sg(spec.sg_kind, dims[k], dims[-1], config.lr_sg, rng.child(3, k))) for k in self.insertions)
        self.optimizer = OptimizerBank(config.lr_main)
        self.iteration = 0
        # test hooks
        self.oracle_sg = False
        self.apply_order: Sequence[str] = UPDATE_GROUPS

    @property
    def mode(self) -> str:
        variant = self.method.variant
        if variant in (Variant.SG, Variant.SGPROP):
            return "single_sg" if len(self.insertions) == 1 else "every_layer_sg"
        if variant is Variant.BACKPROP:
            return "backprop"
        return "conspiring"

    def batch_indices(self, iteration: int, n: int) -> np.ndarray:
        if n <= self.config.batch_size:
            return np.arange(n)
        return self.rng.child(1, iteration).choice(n, self.config.batch_size, replace=False)

    # ------------------------------------------------------------------
    # Planning
    # ------------------------------------------------------------------

    def _loss_and_grad(self, fp: ForwardPass, Y: Matrix) -> Tuple[float, Matrix]:
        value = self.loss.forward(fp.output, Y)
        if not np.isfinite(value):
            raise NonFiniteError("training loss", f"iteration {self.iteration}")
        return value, self.loss.backward(fp.output, Y)

    def _finish_plan(self, plan: StepPlan, batch_loss: float) -> StepPlan:
        self.net.add_l2(plan.grads, self.config.l2_penalty)
        plan.metrics["batch_loss"] = batch_loss
        return plan

    def plan_backprop(self, X: Matrix, Y: Matrix, check: bool = False) -> StepPlan:
        if self.insertions:
            raise ValidationError("backprop step needs a network without SG insertions")
        fp = self.net.forward(X, "train")
        value, G = self._loss_and_grad(fp, Y)
        _, grads = self.net.backward_range(fp, G, self.net.n_blocks, 0)
        plan = StepPlan(fp, grads, metrics={"grad_norm": _norm(grads)})
        return self._finish_plan(plan, value)

    def plan_decoupled(self, X: Matrix, Y: Matrix, check: bool = False) -> StepPlan:
        """
        SG-driven step for any sorted set of insertion boundaries k_1 < ... < k_m

        Blocks above k_m get true gradients; segment (k_{j-1}, k_j] gets SG_{k_j}'s signal.
        SG_{k_m} targets the true dL/dh; each lower SG targets the next SG's prediction
        backpropagated through the segment in between.
        """
        if not self.insertions:
            raise ValidationError("decoupled step needs at least one SG insertion")
        net, n_blocks, ks = self.net, self.net.n_blocks, list(self.insertions)
        n = X.shape[0]
        fp = net.forward(X, "train")
        value, G = self._loss_and_grad(fp, Y)
        true_top, grads = net.backward_range(fp, G, n_blocks, ks[-1])
        target = n * true_top
        top_target = target
        plan = StepPlan(fp, grads)
        sg_losses = {}
        propagates = self.method.variant is Variant.SGPROP and not self.oracle_sg
        top_prediction = None
        for j in range(len(ks) - 1, -1, -1):
            k = ks[j]
            bottom = ks[j - 1] if j > 0 else 0
            h = fp.boundaries[k]
            sg = self.sgs[k]
            plan.sg_batches[k] = (h, Y, target)
            if self.oracle_sg:
                prediction = target
                signal = target
            else:
                prediction = sg.forward(h, Y)
                signal = conspiring_signal(self.method, h, Y, {"sg": sg, "dL_dh": target})
            if top_prediction is None:
                top_prediction = prediction
            diff = prediction - target
            sg_losses[str(k)] = float(np.mean(np.sum(diff * diff, axis=1)))
            below, segment_grads = net.backward_range(fp, signal / n, k, bottom)
            grads.update(segment_grads)
            if bottom > 0:
                if propagates:
                    below, _ = net.backward_range(fp, prediction / n, k, bottom)
                target = n * below
        plan.metrics["sg_losses"] = sg_losses
        if check or self.config.eps_tracking_monitor:
            _, true_grads = net.backward_range(fp, G, n_blocks, 0)
            plan.metrics["grad_norm"] = _norm(true_grads)
            if self.config.eps_tracking_monitor:
                self._eps_metrics(plan, true_grads, top_prediction, top_target)
        return self._finish_plan(plan, value)

    def _eps_metrics(self, plan: StepPlan, true_grads: Dict[str, Matrix], prediction: Matrix,
                     target: Matrix) -> None:
        ks = self.insertions
        bottom = ks[-2] if len(ks) > 1 else 0
        names = [name for n in range(bottom + 1, ks[-1] + 1) for name in self.net.block_parameter_names(n)]
        lower_norm = _norm({name: true_grads[name] for name in names})
        error_norm = _norm({name: plan.grads[name] - true_grads[name] for name in names})
        plan.metrics["sg_error_norm"] = frobenius_norm(prediction - target)
        plan.metrics["backprop_sg_error_norm"] = error_norm
        plan.metrics["lower_grad_norm"] = lower_norm
        plan.metrics["eps_ratio"] = error_norm / lower_norm if lower_norm > 0.0 else None

    def plan_conspiring(self, X: Matrix, Y: Matrix, check: bool = False) -> StepPlan:
        """Each block is updated from the signal the method delivers at its output boundary"""
        net, n_blocks = self.net, self.net.n_blocks
        variant = self.method.variant
        n = X.shape[0]
        fp = net.forward(X, "train")
        value, G = self._loss_and_grad(fp, Y)
        dl_dp = n * G
        grads: Dict[str, Matrix] = {}
        upstream = G
        for b in range(n_blocks, 0, -1):
            dl_dg, block_grads = net.block_backward_to_dense(b, fp.caches[b - 1], upstream)
            grads.update(block_grads)
            if b == 1:
                break
            context = {"boundary": b - 1, "dL_dp": dl_dp}
            if variant is Variant.BACKPROP:
                context["dL_dh"] = n * (dl_dg @ net.blocks[b - 1][0].W.T)
            elif variant is Variant.FA:
                context["dL_dg"] = n * dl_dg
            upstream = conspiring_signal(self.method, fp.boundaries[b - 1], Y, context) / n
        plan = StepPlan(fp, grads)
        if check:
            _, true_grads = net.backward_range(fp, G, n_blocks, 0)
            plan.metrics["grad_norm"] = _norm(true_grads)
        return self._finish_plan(plan, value)

    def plan_step(self, X: Matrix, Y: Matrix, check: bool = False) -> StepPlan:
        if X.shape[0] != Y.shape[0]:
            raise ShapeError("batch inputs and targets disagree on n", X.shape, Y.shape)
        mode = self.mode
        if mode == "backprop":
            return self.plan_backprop(X, Y, check)
        if mode == "conspiring":
            return self.plan_conspiring(X, Y, check)
        return self.plan_decoupled(X, Y, check)

    # ------------------------------------------------------------------
    # Applying
    # ------------------------------------------------------------------

    def _split(self) -> int:
        return self.insertions[-1] if self.insertions else self.net.n_blocks

    def apply_plan(self, plan: StepPlan) -> Dict:
        """Apply a plan's updates in self.apply_order; groups never read each other's results"""
        if sorted(self.apply_order) != sorted(UPDATE_GROUPS):
            raise ValidationError(f"apply_order must be a permutation of {UPDATE_GROUPS}")
        self.net.commit_running_stats(plan.forward)
        params = self.net.parameters()
        split = self._split()
        for group in self.apply_order:
            if group == "sg":
                for k, (h, y, target) in plan.sg_batches.items():
                    self.sgs[k].train_step(h, y, target)
                continue
            names = [name for name in plan.grads
                     if (int(name[1:name.index(".")]) <= split) == (group == "lower")]
            self.optimizer.apply(params, plan.grads, order=names)
        self.iteration += 1
        return plan.metrics

    def step(self, X: Matrix, Y: Matrix, check: bool = False) -> Dict:
        return self.apply_plan(self.plan_step(X, Y, check))

    def train_step_backprop(self, X: Matrix, Y: Matrix) -> Dict:
        return self.apply_plan(self.plan_backprop(X, Y))

    def train_step_single_sg(self, X: Matrix, Y: Matrix) -> Dict:
        if len(self.insertions) != 1:
            raise ValidationError("single-SG step needs exactly one SG insertion")
        return self.apply_plan(self.plan_decoupled(X, Y))

    def train_step_every_layer_sg(self, X: Matrix, Y: Matrix) -> Dict:
        if self.insertions != tuple(range(1, self.net.n_blocks)):
            raise ValidationError("every-layer step needs an SG at every hidden boundary")
        return self.apply_plan(self.plan_decoupled(X, Y))

    def train_step_conspiring(self, X: Matrix, Y: Matrix) -> Dict:
        if self.method.uses_sg_module:
            raise ValidationError(f"{self.method.variant.value} trains SG modules; use the decoupled step")
        return self.apply_plan(self.plan_conspiring(X, Y))

    # ------------------------------------------------------------------
    # Evaluation and records
    # ------------------------------------------------------------------

    def evaluate(self, dataset: Dataset) -> Tuple[float, float]:
        pred = self.net.predict(dataset.X, "eval")
        return self.loss.forward(pred, dataset.Y), accuracy(pred, dataset.Y)

    def weight_norms(self) -> List[float]:
        return [float(np.sum(layer.W * layer.W)) for layer in self.net.dense_layers()]

    def record(self, iteration: int, metrics: Dict, dataset: Dataset,
               test_set: Optional[Dataset] = None) -> ExperimentRecord:
        train_loss, train_acc = self.evaluate(dataset)
        if not np.isfinite(train_loss):
            raise NonFiniteError("train loss", f"iteration {iteration}")
        record = ExperimentRecord(
            iteration=iteration,
            batch_loss=metrics["batch_loss"],
            train_loss=train_loss,
            train_accuracy=train_acc,
            sg_losses=metrics.get("sg_losses", {}),
            eps_ratio=metrics.get("eps_ratio"),
            sg_error_norm=metrics.get("sg_error_norm"),
            backprop_sg_error_norm=metrics.get("backprop_sg_error_norm"),
            lower_grad_norm=metrics.get("lower_grad_norm"),
            grad_norm=metrics.get("grad_norm"),
            weight_norms=self.weight_norms(),
        )
        if test_set is not None:
            record.test_loss, record.test_accuracy = self.evaluate(test_set)
        return record

    # ------------------------------------------------------------------
    # Checkpointing
    # ------------------------------------------------------------------

    @staticmethod
    def _adam_blobs(prefix: str, bank: OptimizerBank, blobs: "OrderedDict[str, np.ndarray]") -> None:
        for name, state in bank.states.items():
            blobs[f"{prefix}.{name}.m"] = state.m
            blobs[f"{prefix}.{name}.v"] = state.v
            blobs[f"{prefix}.{name}.t"] = np.array([[float(state.t)]])

    def state_blobs(self) -> "OrderedDict[str, np.ndarray]":
        blobs = OrderedDict()
        for name, value in self.net.parameters().items():
            blobs[f"net.{name}"] = value
        for name, value in self.net.buffers().items():
            blobs[f"net.{name}"] = value
        self._adam_blobs("adam", self.optimizer, blobs)
        for k, sg in self.sgs.items():
            for name, value in sg.parameters().items():
                blobs[f"sg{k}.{name}"] = value
            self._adam_blobs(f"sgadam{k}", sg.optimizer, blobs)
        for boundary, matrix in self.method.fixed.items():
            blobs[f"method.fixed.{boundary}"] = matrix
        return blobs

    @staticmethod
    def _restore_into(blobs: Dict[str, np.ndarray], prefix: str, params: Dict[str, Matrix]) -> None:
        for name, value in params.items():
            key = f"{prefix}.{name}"
            if key not in blobs:
                raise CheckpointError(f"checkpoint has no blob {key}")
            if blobs[key].shape != value.shape:
                raise CheckpointError(f"checkpoint/network shape mismatch at {key}: "
                                      f"{blobs[key].shape} vs {value.shape}")
            value[...] = blobs[key]

    @staticmethod
    def _restore_adam(blobs: Dict[str, np.ndarray], prefix: str, bank: OptimizerBank,
                      params: Dict[str, Matrix]) -> None:
        bank.states.clear()
        for key in blobs:
            if not (key.startswith(prefix + ".") and key.endswith(".m")):
                continue
            name = key[len(prefix) + 1:-2]
            if name not in params or blobs[key].shape != params[name].shape:
                raise CheckpointError(f"optimizer state {key} does not fit the network")
            bank.states[name] = AdamState(m=blobs[key].copy(), v=blobs[f"{prefix}.{name}.v"].copy(),
                                          t=int(blobs[f"{prefix}.{name}.t"][0, 0]), lr=bank.lr)

    def load_state_blobs(self, blobs: Dict[str, np.ndarray]) -> None:
        self._restore_into(blobs, "net", self.net.parameters())
        self._restore_into(blobs, "net", self.net.buffers())
        self._restore_adam(blobs, "adam", self.optimizer, self.net.parameters())
        for k, sg in self.sgs.items():
            self._restore_into(blobs, f"sg{k}", sg.parameters())
            self._restore_adam(blobs, f"sgadam{k}", sg.optimizer, sg.parameters())
        for boundary, matrix in self.method.fixed.items():
            key = f"method.fixed.{boundary}"
            if key not in blobs or blobs[key].shape != matrix.shape:
                raise CheckpointError(f"checkpoint does not carry a matching {key}")
            if not np.array_equal(blobs[key], matrix):
                raise CheckpointError(f"{key} differs from the seeded feedback matrix")

    def metadata(self) -> Dict:
        return {"format": "dni_lab", "iteration": self.iteration, "spec": asdict(self.spec),
                "seed": self.config.seed}

    def save(self, path: str) -> str:
        return save_checkpoint(path, self.metadata(), self.state_blobs())

    def restore(self, path: str) -> Dict:
        metadata, blobs = load_checkpoint(path)
        if list(metadata.get("spec", {}).get("layer_dims", [])) != list(self.spec.layer_dims):
            raise CheckpointError(f"{path}: checkpoint layer_dims {metadata.get('spec', {}).get('layer_dims')} "
                                  f"do not match {list(self.spec.layer_dims)}")
        self.load_state_blobs(blobs)
        self.iteration = int(metadata.get("iteration", 0))
        logger.info(f"Restored trainer from {path} at iteration {self.iteration}")
        return metadata


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    trainer: Trainer
    records: List[Dict]
    run_dir: Optional[str] = None
    metrics_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    stopped_early: bool = False
    completed: bool = True

    @property
    def final(self) -> Optional[Dict]:
        return self.records[-1] if self.records else None


def check_dims(spec: NetworkSpec, dataset: Dataset) -> None:
    if spec.layer_dims[0] != dataset.d or spec.layer_dims[-1] != dataset.c:
        raise ShapeError(f"network {list(spec.layer_dims)} does not fit dataset with d={dataset.d} c={dataset.c}",
                         (spec.layer_dims[0], spec.layer_dims[-1]), (dataset.d, dataset.c))


def run_experiment(spec: NetworkSpec, config: TrainConfig, dataset: Dataset, run_dir: Optional[str] = None,
                   test_set: Optional[Dataset] = None, resume: bool = False,
                   stop_after: Optional[int] = None, trainer: Optional[Trainer] = None) -> RunResult:
    """
    Train for config.iterations steps, logging every log_every steps

    With a run_dir the records go to metrics.jsonl and the state to checkpoint.dnickpt
    (every checkpoint_every steps and at the end). resume continues from that checkpoint;
    stop_after ends the run early with a checkpoint, as an interruption would.
    """
    check_dims(spec, dataset)
    trainer = trainer or Trainer(spec, config)
    metrics_path = os.path.join(run_dir, METRICS_FILE) if run_dir else None
    checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE) if run_dir else None
    restored = False
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        trainer.restore(checkpoint_path)
        restored = True
    recorder = MetricsRecorder(metrics_path, resume=restored)
    if restored:
        recorder.truncate(trainer.iteration)

    result = RunResult(trainer, recorder.records, run_dir, metrics_path, checkpoint_path)
    last = config.iterations - 1
    logger.info(f"Training {list(spec.layer_dims)} with {spec.method} ({trainer.mode}) "
                f"for {config.iterations} iterations from iteration {trainer.iteration}")
    while trainer.iteration < config.iterations:
        t = trainer.iteration
        idx = trainer.batch_indices(t, dataset.n)
        check = t % config.log_every == 0 or t == last
        metrics = trainer.step(dataset.X[idx], dataset.Y[idx], check=check)
        if check:
            record = trainer.record(t, metrics, dataset, test_set)
            recorder.add_record(record.to_dict())
            sg_text = " ".join(f"sg{k}={v:.3e}" for k, v in record.sg_losses.items())
            logger.info(f"iter {t}: train_loss={record.train_loss:.6f} acc={record.train_accuracy:.4f} {sg_text}")
        done = trainer.iteration
        if checkpoint_path and config.checkpoint_every and done % config.checkpoint_every == 0:
            trainer.save(checkpoint_path)
        if check and metrics.get("grad_norm") is not None and metrics["grad_norm"] < config.grad_tol:
            logger.info(f"Gradient norm {metrics['grad_norm']:.3e} below {config.grad_tol}; stopping at iteration {t}")
            result.stopped_early = True
            break
        if stop_after is not None and done >= stop_after and done < config.iterations:
            if checkpoint_path:
                trainer.save(checkpoint_path)
            result.completed = False
            result.records = recorder.records
            return result
    if checkpoint_path:
        trainer.save(checkpoint_path)
    result.records = recorder.records
    return result


@dataclass
class Comparison:
    sg_final: float
    backprop_final: float

    @property
    def gap(self) -> float:
        return self.sg_final - self.backprop_final


def baseline_spec(spec: NetworkSpec) -> NetworkSpec:
    return replace(spec, method="backprop", sg_insertions="none")


def compare_with_backprop(spec: NetworkSpec, config: TrainConfig, dataset: Dataset,
                          run_dir: Optional[str] = None) -> Comparison:
    """Train spec and its backprop twin on the same data and seed; compare final full-data losses"""
    sg_run = run_experiment(spec, config, dataset, os.path.join(run_dir, "sg") if run_dir else None)
    bp_run = run_experiment(baseline_spec(spec), config, dataset,
                            os.path.join(run_dir, "backprop") if run_dir else None)
    comparison = Comparison(sg_run.trainer.evaluate(dataset)[0], bp_run.trainer.evaluate(dataset)[0])
    logger.info(f"Final loss {spec.method}={comparison.sg_final:.6f} backprop={comparison.backprop_final:.6f} "
                f"gap={comparison.gap:.6f}")
    return comparison


# ---------------------------------------------------------------------------
# Table of final-loss differences on artificial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Table3Cell:
    dataset: str
    k: int
    depth: str = "shallow"
    loss: str = "mse"

    @property
    def row_name(self) -> str:
        return f"{self.dataset}{self.k}"

    @property
    def column_name(self) -> str:
        return f"{self.depth} {self.loss}"


@dataclass
class Table3Row:
    cell: Table3Cell
    gaps: List[float]

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps))


def table3_spec(cell: Table3Cell, hidden_width: int = 20, hidden_layers: int = 10,
                sg_kind: str = "linear") -> NetworkSpec:
    """Shallow: one linear layer with the SG between output and loss. Deep: a linear stack with a mid SG"""
    if cell.depth == "shallow":
        return NetworkSpec((cell.k, 2), activation="identity", loss=cell.loss, sg_insertions=(1,),
                           sg_kind=sg_kind, method="sg")
    if cell.depth == "deep":
        dims = (cell.k,) + (hidden_width,) * hidden_layers + (2,)
        return NetworkSpec(dims, activation="identity", loss=cell.loss, sg_insertions="single",
                           sg_kind=sg_kind, method="sg")
    raise ValidationError(f"Unsupported table depth: {cell.depth}")


def run_table3(cells: Sequence[Table3Cell], config: TrainConfig, replicates: int = 10,
               hidden_width: int = 20, sg_kind: str = "linear", n_points: Optional[int] = None) -> List[Table3Row]:
    """Average SG-minus-backprop final-loss gaps over replicate seeds (dataset and network share the seed)"""
    rows = []
    for cell in cells:
        gaps = []
        for seed in replicate_seeds(config.seed, replicates):
            dataset = generate(cell.dataset, cell.k, seed, n_points)
            spec = table3_spec(cell, hidden_width, sg_kind=sg_kind)
            gaps.append(compare_with_backprop(spec, replace(config, seed=seed), dataset).gap)
        row = Table3Row(cell, gaps)
        logger.info(f"{cell.row_name} {cell.column_name}: mean gap {row.mean_gap:.5f}")
        rows.append(row)
    return rows


def table3_markdown(rows: Sequence[Table3Row]) -> str:
    columns = []
    names = []
    values = {}
    for row in rows:
        if row.cell.column_name not in columns:
            columns.append(row.cell.column_name)
        if row.cell.row_name not in names:
            names.append(row.cell.row_name)
        values[(row.cell.row_name, row.cell.column_name)] = row.mean_gap
    lines = ["| dataset | " + " | ".join(columns) + " |", "|---" * (len(columns) + 1) + "|"]
    for name in names:
        cells = [f"{values[(name, c)]:.5f}" if (name, c) in values else "" for c in columns]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def depth_sweep(depths: Sequence[int], base: NetworkSpec, config: TrainConfig, dataset: Dataset,
                hidden_width: int = 512, run_dir: Optional[str] = None) -> List[Dict]:
    """Backprop vs single-SG final train accuracy for each hidden depth"""
    rows = []
    for depth in depths:
        dims = (dataset.d,) + (hidden_width,) * int(depth) + (dataset.c,)
        for spec in (replace(base, layer_dims=dims, method="backprop", sg_insertions="none"),
                     replace(base, layer_dims=dims, method="sg", sg_insertions="single")):
            sub_dir = os.path.join(run_dir, f"depth{depth}_{spec.method}") if run_dir else None
            run = run_experiment(spec, config, dataset, sub_dir)
            loss, acc = run.trainer.evaluate(dataset)
            rows.append({"depth": int(depth), "method": spec.method, "train_loss": loss, "train_accuracy": acc})
            logger.info(f"depth {depth} {spec.method}: train accuracy {acc:.4f}")
    return rows
