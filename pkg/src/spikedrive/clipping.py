"""Membrane-potential clipping: quantile-shifted ReLU with an EMA threshold.

Subtracting the q-th quantile of the activation tensor before a ReLU zeroes
(at least) the bottom q fraction of values, which translates directly into
zero spike counts downstream. The threshold tau is calibrated with a moving
average over calibration batches and then frozen; inference never updates it,
so repeated forwards are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import (
    DimMismatchError,
    EmptyInputError,
    NotCalibratedError,
    WrongModeError,
)
from .rotation import OrthogonalOp
from .tensor import real_matrix

__all__ = ["ClipMode", "ClipState", "quantile", "qsrelu", "calibrate_step", "clip_rotated"]


class ClipMode(Enum):
    CALIBRATE = "calibrate"
    INFERENCE = "inference"


@dataclass(frozen=True)
class ClipState:
    """Quantile ratio, EMA factor, and the current threshold tau."""

    q: float
    alpha: float = 0.99
    tau: float = 0.0
    calibrated: bool = False
    mode: ClipMode = ClipMode.CALIBRATE

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")

    def freeze(self) -> "ClipState":
        """Switch to inference mode with the current tau locked in."""
        if not self.calibrated:
            raise NotCalibratedError("cannot freeze a threshold that was never calibrated")
        return replace(self, mode=ClipMode.INFERENCE)

    def to_dict(self) -> dict:
        return {"q": self.q, "alpha": self.alpha, "tau": self.tau}

    @staticmethod
    def from_dict(d: dict, mode: ClipMode = ClipMode.INFERENCE) -> "ClipState":
        return ClipState(
            q=float(d["q"]),
            alpha=float(d["alpha"]),
            tau=float(d["tau"]),
            calibrated=True,
            mode=mode,
        )


def quantile(u, q: float) -> float:
    """q-th quantile over all elements, linearly interpolated.

    Interpolation between the closest order statistics keeps the estimate
    continuous in q, which the monotone-sparsification property relies on.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    try:
        u = real_matrix(u)
    except EmptyInputError:
        raise
    return float(np.quantile(u, q, method="linear"))


def qsrelu(u, tau: float) -> np.ndarray:
    """Shifted ReLU: max(u - tau, 0) element-wise."""
    u = real_matrix(u)
    return real_matrix(np.maximum(u - tau, 0.0))


def calibrate_step(state: ClipState, u) -> ClipState:
    """Fold one calibration batch into the threshold EMA.

    The first call initializes tau to the batch quantile; later calls apply
    tau <- alpha * tau + (1 - alpha) * quantile(u, q). Only legal in
    calibrate mode.
    """
    if state.mode is not ClipMode.CALIBRATE:
        raise WrongModeError("calibrate_step requires calibrate mode")
    batch_tau = quantile(u, state.q)
    if not state.calibrated:
        new_tau = batch_tau
    else:
        new_tau = state.alpha * state.tau + (1.0 - state.alpha) * batch_tau
    return replace(state, tau=new_tau, calibrated=True)


def clip_rotated(u, op: OrthogonalOp, state: ClipState) -> np.ndarray:
    """Rotate, subtract tau, ReLU: the sparsifying front end of an encoder.

    Downstream weights must be pre-rotated with the same op for the layer's
    computation to stay equivalent; the pipeline wires that up. In inference
    mode the state must have been calibrated.
    """
    u = real_matrix(u)
    if u.shape[1] != op.dim:
        raise DimMismatchError(f"u has {u.shape[1]} cols, op dim is {op.dim}")
    if state.mode is ClipMode.INFERENCE and not state.calibrated:
        raise NotCalibratedError("inference-mode clipping requires a calibrated tau")
    return qsrelu(op.apply(u), state.tau)
