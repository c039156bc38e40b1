#!/usr/bin/env python3
"""
Linear SG Modules
SG(h, y) = hA + yB + C, plus the activation-only and label-only ablations
"""

from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from dni_lab.errors import ValidationError
from dni_lab.linalg import Matrix
from .base import SGModule


class LinearSG(SGModule):
    """Linear SG module; every parameter starts at zero"""

    kind = "linear"
    uses_h = True
    uses_y = True

    def __init__(self, dim_h: int, dim_y: int, lr: float = 3e-5):
        super().__init__(dim_h, dim_y, lr)
        self.A = np.zeros((self.dim_h, self.dim_h)) if self.uses_h else None
        self.B = np.zeros((self.dim_y, self.dim_h)) if self.uses_y else None
        self.C = np.zeros((1, self.dim_h))

    def parameters(self) -> "OrderedDict[str, Matrix]":
        params = OrderedDict()
        if self.uses_h:
            params["A"] = self.A
        if self.uses_y:
            params["B"] = self.B
        params["C"] = self.C
        return params

    def forward(self, h: Matrix, y: Matrix) -> Matrix:
        self.check_inputs(h, y)
        out = np.zeros_like(h) + self.C
        if self.uses_h:
            out = out + h @ self.A
        if self.uses_y:
            out = out + y @ self.B
        return out

    def vjp(self, h: Matrix, y: Matrix, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        self.check_inputs(h, y)
        grads = {"C": upstream.sum(axis=0, keepdims=True)}
        if self.uses_y:
            grads["B"] = y.T @ upstream
        if self.uses_h:
            grads["A"] = h.T @ upstream
            return upstream @ self.A.T, grads
        return np.zeros_like(h), grads


class AblatedSG(LinearSG):
    """Linear SG with either the label term (activation_only) or the activation term (label_only) removed"""

    ABLATIONS = ("activation_only", "label_only")

    def __init__(self, dim_h: int, dim_y: int, ablation: str, lr: float = 3e-5):
        if ablation not in self.ABLATIONS:
            raise ValidationError(f"Unsupported SG ablation: {ablation}")
        self.kind = ablation
        self.uses_h = ablation == "activation_only"
        self.uses_y = ablation == "label_only"
        super().__init__(dim_h, dim_y, lr)
