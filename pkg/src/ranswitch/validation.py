"""Input validation helpers and a minimal estimator-parameter mixin."""
from __future__ import annotations

import inspect

import numpy as np


class ConfigurationError(ValueError):
    pass


class ContractViolation(ValueError):
    pass


class EstimatorError(RuntimeError):
    """Numerical failure inside an estimator; carries a diagnostic."""

    def __init__(self, msg, condition_number=None):
        super().__init__(msg)
        self.condition_number = condition_number


class PipelineStateError(RuntimeError):
    """A buffer was consumed before the owning expert populated it."""


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    a = np.asarray(a)
    if not np.all(np.isfinite(a.view(np.float64) if np.iscomplexobj(a) else a)):
        raise ContractViolation(f"{name} contains NaN or Inf")
    return a


def check_shape(a: np.ndarray, shape: tuple, name: str = "array") -> np.ndarray:
    a = np.asarray(a)
    if a.shape != tuple(shape):
        raise ContractViolation(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a


def check_in_range(x, lo, hi, name: str):
    if not (lo <= x <= hi):
        raise ConfigurationError(f"{name}={x} outside [{lo}, {hi}]")
    return x


def check_2d_features(x, n_features=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ContractViolation(f"expected 2-D feature array, got ndim={x.ndim}")
    if n_features is not None and x.shape[1] != n_features:
        raise ContractViolation(
            f"expected {n_features} feature columns, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("feature array contains NaN or Inf")
    return x


class ParamsMixin:
    """get_params/set_params over __init__ keyword arguments."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self
