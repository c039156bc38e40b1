"""
SG Modules Package
Synthetic-gradient parameterisations and the conspiring-gradients method table
"""

from typing import Optional

from dni_lab.errors import ValidationError
from dni_lab.linalg import Matrix, Rng
from .base import SGModule
from .constant import ConstantSG
from .conspiring import (
    METHOD_TABLE,
    GradientMethod,
    MethodRow,
    Variant,
    build_method,
    conspiring_sg_loss,
    conspiring_signal,
    sg_parameterization,
    sg_target,
)
from .linear import AblatedSG, LinearSG
from .sigmoid import SigmoidSG

SG_KINDS = ("linear", "activation_only", "label_only", "sigmoid", "constant")


def build_sg(kind: str, dim_h: int, dim_y: int, lr: float = 3e-5, rng: Optional[Rng] = None) -> SGModule:
    """Factory for every SG kind a config can name"""
    if kind == "linear":
        return LinearSG(dim_h, dim_y, lr)
    if kind in AblatedSG.ABLATIONS:
        return AblatedSG(dim_h, dim_y, kind, lr)
    if kind == "sigmoid":
        return SigmoidSG(dim_h, dim_y, lr, rng)
    if kind == "constant":
        return ConstantSG(dim_h, dim_y, lr)
    raise ValidationError(f"Unsupported SG kind: {kind}")


def sg_forward(module: SGModule, h: Matrix, y: Matrix) -> Matrix:
    return module.forward(h, y)


def sg_train_step(module: SGModule, h: Matrix, y: Matrix, target_grad: Matrix) -> float:
    return module.train_step(h, y, target_grad)


__all__ = [
    "SGModule", "LinearSG", "AblatedSG", "SigmoidSG", "ConstantSG", "SG_KINDS",
    "build_sg", "sg_forward", "sg_train_step",
    "Variant", "MethodRow", "METHOD_TABLE", "GradientMethod", "build_method",
    "conspiring_signal", "conspiring_sg_loss", "sg_parameterization", "sg_target",
]
