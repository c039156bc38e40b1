#!/usr/bin/env python3
"""
Sigmoid SG Module
SG(h, y) = d * sigmoid(hA) + yB + C, the variant suited to log loss
"""

from collections import OrderedDict
from typing import Dict, Optional, Tuple

import numpy as np

from dni_lab.linalg import Matrix, Rng
from dni_lab.network import sigmoid
from .base import SGModule


class SigmoidSG(SGModule):
    """d is a zero-initialised elementwise scale so the module starts at exactly 0"""

    kind = "sigmoid"

    def __init__(self, dim_h: int, dim_y: int, lr: float = 3e-5, rng: Optional[Rng] = None):
        super().__init__(dim_h, dim_y, lr)
        rng = rng or Rng(0)
        self.d = np.zeros((1, self.dim_h))
        self.A = rng.gaussian(self.dim_h, self.dim_h, std=1.0 / np.sqrt(self.dim_h))
        self.B = np.zeros((self.dim_y, self.dim_h))
        self.C = np.zeros((1, self.dim_h))

    def parameters(self) -> "OrderedDict[str, Matrix]":
        return OrderedDict([("d", self.d), ("A", self.A), ("B", self.B), ("C", self.C)])

    def forward(self, h: Matrix, y: Matrix) -> Matrix:
        self.check_inputs(h, y)
        return self.d * sigmoid(h @ self.A) + y @ self.B + self.C

    def vjp(self, h: Matrix, y: Matrix, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        self.check_inputs(h, y)
        s = sigmoid(h @ self.A)
        pre = upstream * self.d * s * (1.0 - s)
        grads = {
            "d": (upstream * s).sum(axis=0, keepdims=True),
            "A": h.T @ pre,
            "B": y.T @ upstream,
            "C": upstream.sum(axis=0, keepdims=True),
        }
        return pre @ self.A.T, grads
