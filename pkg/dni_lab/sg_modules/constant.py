#!/usr/bin/env python3
"""
Constant SG Module
An input-independent trainable vector c
"""

from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from dni_lab.linalg import Matrix
from .base import SGModule


class ConstantSG(SGModule):
    kind = "constant"

    def __init__(self, dim_h: int, dim_y: int, lr: float = 3e-5):
        super().__init__(dim_h, dim_y, lr)
        self.c = np.zeros((1, self.dim_h))

    def parameters(self) -> "OrderedDict[str, Matrix]":
        return OrderedDict([("c", self.c)])

    def forward(self, h: Matrix, y: Matrix) -> Matrix:
        self.check_inputs(h, y)
        return np.zeros_like(h) + self.c

    def vjp(self, h: Matrix, y: Matrix, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        self.check_inputs(h, y)
        return np.zeros_like(h), {"c": upstream.sum(axis=0, keepdims=True)}
