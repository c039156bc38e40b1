#!/usr/bin/env python3
"""
Conspiring Gradients
Backprop, SG, SG+prop, FA, DFA and Kickback expressed as choices of SG parameterisation,
SG target and SG loss

Each method is a row of METHOD_TABLE. conspiring_signal returns the per-sample signal a
method feeds to the layers below boundary h; differentiating
conspiring_sg_loss(sg_target(...), sg_parameterization(...)) wrt h gives the same signal.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from dni_lab.errors import MissingContextError, ShapeError, ValidationError
from dni_lab.linalg import Matrix, Rng
from .base import SGModule

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    BACKPROP = "backprop"
    SG = "sg"
    SGPROP = "sgprop"
    FA = "fa"
    DFA = "dfa"
    KICKBACK = "kickback"


@dataclass(frozen=True)
class MethodRow:
    """One column of the unified table"""
    signal: str
    parameterization: str
    target: str
    sg_loss: str
    sg_trains: bool
    update_locked: bool
    backward_locked: bool
    direct_error: bool


METHOD_TABLE: Dict[Variant, MethodRow] = {
    Variant.BACKPROP: MethodRow("dL/dh", "h", "-dL/dh", "neg_inner", False, True, True, False),
    Variant.SG: MethodRow("SG(h,y)", "SG(h,y)", "dL/dh", "mse", True, False, False, False),
    Variant.SGPROP: MethodRow("SG(h,y) + a*dL_SG/dh", "SG(h,y)", "dL/dh", "mse", True, True, True, False),
    Variant.FA: MethodRow("(dL/dg)A^T", "hA", "-dL/dg", "neg_inner", False, True, True, False),
    Variant.DFA: MethodRow("(dL/dp)A^T", "hA", "-dL/dp", "neg_inner", False, True, False, True),
    Variant.KICKBACK: MethodRow("(dL/dp)1^T", "h1", "-dL/dp", "neg_inner", False, True, False, True),
}

FIXED_INITS = ("gaussian", "ones")


@dataclass
class GradientMethod:
    """A conspiring-gradients variant plus its frozen feedback matrices (keyed by boundary)"""
    variant: Variant
    alpha: float = 1.0
    fixed: Dict[int, Matrix] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        for boundary, matrix in self.fixed.items():
            frozen = np.array(matrix, dtype=np.float64)
            frozen.setflags(write=False)
            self.fixed[boundary] = frozen

    @property
    def row(self) -> MethodRow:
        return METHOD_TABLE[self.variant]

    @property
    def update_locked(self) -> bool:
        return self.row.update_locked

    @property
    def backward_locked(self) -> bool:
        return self.row.backward_locked

    @property
    def direct_error(self) -> bool:
        return self.row.direct_error

    @property
    def uses_sg_module(self) -> bool:
        return self.row.sg_trains

    def feedback(self, boundary: int, dim_h: int, dim_out: int) -> Matrix:
        """Feedback matrix A (dim_h x dim_out) used at a boundary"""
        if self.variant is Variant.KICKBACK:
            return np.ones((dim_h, dim_out))
        if boundary not in self.fixed:
            raise MissingContextError(self.variant.value, f"fixed matrix for boundary {boundary}")
        matrix = self.fixed[boundary]
        if matrix.shape != (dim_h, dim_out):
            raise ShapeError(f"{self.variant.value} feedback matrix at boundary {boundary}",
                             matrix.shape, (dim_h, dim_out))
        return matrix


def build_method(variant, layer_dims: Sequence[int], rng: Optional[Rng] = None,
                 alpha: float = 1.0, fixed_init: str = "gaussian") -> GradientMethod:
    """
    Build a GradientMethod for a network with the given layer sizes

    FA gets one matrix per hidden boundary b of shape dims[b] x dims[b+1]; DFA gets
    dims[b] x dims[N]. Entries are N(0, 1/dims[b]) or all ones with fixed_init='ones'.
    """
    variant = Variant(variant)
    if fixed_init not in FIXED_INITS:
        raise ValidationError(f"Unsupported fixed_init: {fixed_init}")
    dims = [int(d) for d in layer_dims]
    n_blocks = len(dims) - 1
    fixed = {}
    if variant in (Variant.FA, Variant.DFA):
        rng = rng or Rng(0)
        for b in range(1, n_blocks):
            cols = dims[b + 1] if variant is Variant.FA else dims[n_blocks]
            if fixed_init == "ones":
                fixed[b] = np.ones((dims[b], cols))
            else:
                fixed[b] = rng.child(b).gaussian(dims[b], cols, std=1.0 / np.sqrt(dims[b]))
    logger.debug(f"Built {variant.value} method with {len(fixed)} fixed matrices")
    return GradientMethod(variant=variant, alpha=float(alpha), fixed=fixed)


def _need(method: GradientMethod, context: Mapping, item: str):
    if context.get(item) is None:
        raise MissingContextError(method.variant.value, item)
    return context[item]


def _boundary(context: Mapping) -> int:
    return int(context.get("boundary", 1))


def conspiring_signal(method: GradientMethod, h: Matrix, y: Matrix, context: Mapping) -> Matrix:
    """
    Per-sample signal the method sends below boundary h

    Context items: 'dL_dh' (Backprop, and the SG+prop target), 'dL_dp' (DFA, Kickback),
    'dL_dg' (FA), 'sg' (SG, SG+prop) and 'boundary' (FA, DFA).
    """
    variant = method.variant
    if variant is Variant.BACKPROP:
        return _need(method, context, "dL_dh")
    if variant in (Variant.SG, Variant.SGPROP):
        sg: SGModule = _need(method, context, "sg")
        prediction = sg.forward(h, y)
        if variant is Variant.SG:
            return prediction
        target = _need(method, context, "dL_dh")
        return prediction + method.alpha * sg.input_grad(h, y, 2.0 * (prediction - target))
    if variant is Variant.FA:
        dl_dg = _need(method, context, "dL_dg")
        return dl_dg @ method.feedback(_boundary(context), h.shape[1], dl_dg.shape[1]).T
    dl_dp = _need(method, context, "dL_dp")
    return dl_dp @ method.feedback(_boundary(context), h.shape[1], dl_dp.shape[1]).T


def sg_parameterization(method: GradientMethod, h: Matrix, y: Optional[Matrix] = None,
                        context: Optional[Mapping] = None) -> Matrix:
    """The 'SG(h, y)' row: what the method's implicit SG outputs"""
    context = context or {}
    variant = method.variant
    if variant is Variant.BACKPROP:
        return h
    if variant in (Variant.SG, Variant.SGPROP):
        return _need(method, context, "sg").forward(h, y)
    if variant is Variant.FA:
        cols = _need(method, context, "dL_dg").shape[1]
    else:
        cols = _need(method, context, "dL_dp").shape[1]
    return h @ method.feedback(_boundary(context), h.shape[1], cols)


def sg_target(method: GradientMethod, context: Mapping) -> Matrix:
    """The 'SG target' row"""
    variant = method.variant
    if variant in (Variant.SG, Variant.SGPROP):
        return _need(method, context, "dL_dh")
    if variant is Variant.BACKPROP:
        return -_need(method, context, "dL_dh")
    if variant is Variant.FA:
        return -_need(method, context, "dL_dg")
    return -_need(method, context, "dL_dp")


def conspiring_sg_loss(method: GradientMethod, t: Matrix, s: Matrix) -> float:
    """||t - s||^2 for the trainable columns, -<t, s> for the rest (unnormalised sums)"""
    if t.shape != s.shape:
        raise ShapeError("SG loss target/prediction mismatch", t.shape, s.shape)
    if method.row.sg_loss == "mse":
        diff = t - s
        return float(np.sum(diff * diff))
    return float(-np.sum(t * s))
