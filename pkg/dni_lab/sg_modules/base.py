#!/usr/bin/env python3
"""
Base SG Module
Abstract base class for the synthetic-gradient parameterisations (linear, ablated, sigmoid, constant)
"""

from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from dni_lab.errors import ShapeError
from dni_lab.linalg import Matrix, check_finite
from dni_lab.network import OptimizerBank


class SGModule(ABC):
    """Trainable predictor of dL/dh conditioned on (h, y)"""

    kind = "base"

    def __init__(self, dim_h: int, dim_y: int, lr: float = 3e-5):
        """Initialize dimensions and a private Adam bank"""
        self.dim_h = int(dim_h)
        self.dim_y = int(dim_y)
        self.optimizer = OptimizerBank(lr)

    @abstractmethod
    def parameters(self) -> "OrderedDict[str, Matrix]":
        """
        Trainable parameters in a fixed order

        Returns:
            Ordered mapping of parameter name to array (live references)
        """
        pass

    @abstractmethod
    def forward(self, h: Matrix, y: Matrix) -> Matrix:
        """
        Predict dL/dh for a batch

        Args:
            h: Activations, n x dim_h
            y: One-hot labels, n x dim_y

        Returns:
            Predicted gradient with the shape of h
        """
        pass

    @abstractmethod
    def vjp(self, h: Matrix, y: Matrix, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        """
        Vector-Jacobian products of <upstream, SG(h, y)>

        Args:
            h: Activations the prediction was made on
            y: Labels the prediction was made on
            upstream: Gradient of a scalar wrt the SG output

        Returns:
            Tuple (gradient wrt h, gradients wrt each parameter)
        """
        pass

    def check_inputs(self, h: Matrix, y: Matrix) -> None:
        if h.ndim != 2 or h.shape[1] != self.dim_h:
            raise ShapeError(f"{self.kind} SG expects h with {self.dim_h} columns", h.shape)
        if y.ndim != 2 or y.shape != (h.shape[0], self.dim_y):
            raise ShapeError(f"{self.kind} SG expects y of shape (n, {self.dim_y})", h.shape, y.shape)

    def input_grad(self, h: Matrix, y: Matrix, upstream: Matrix) -> Matrix:
        return self.vjp(h, y, upstream)[0]

    def param_grads(self, h: Matrix, y: Matrix, upstream: Matrix) -> Dict[str, Matrix]:
        return self.vjp(h, y, upstream)[1]

    def sg_loss(self, h: Matrix, y: Matrix, target: Matrix) -> float:
        """Batch mean of ||SG(h, y) - target||^2"""
        diff = self.forward(h, y) - target
        return float(np.mean(np.sum(diff * diff, axis=1)))

    def train_step(self, h: Matrix, y: Matrix, target: Matrix) -> float:
        """One Adam step against a constant target; returns the pre-step SG loss"""
        if target.shape != h.shape:
            raise ShapeError("SG target must have the shape of h", h.shape, target.shape)
        check_finite(f"{self.kind} SG target", target)
        prediction = self.forward(h, y)
        diff = prediction - target
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        grads = self.param_grads(h, y, 2.0 * diff / h.shape[0])
        self.optimizer.apply(self.parameters(), {name: grads[name] for name in self.parameters()})
        return loss
