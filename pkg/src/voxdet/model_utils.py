"""Checkpoint-level utilities: weight averaging, BN folding, LR schedules.

A checkpoint is an ordered name -> float32 tensor mapping. Averaging is
anchored on the first checkpoint (anchor + mean of deltas) so averaging
k identical checkpoints returns the input bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

Checkpoint = dict


def _signature(ck: Checkpoint):
    return [(name, tuple(t.shape)) for name, t in ck.items()]


def swa_average(checkpoints) -> Checkpoint:
    """Element-wise arithmetic mean of checkpoints with equal signatures."""
    if not checkpoints:
        raise InputError("need at least one checkpoint to average")
    base = checkpoints[0]
    ref = _signature(base)
    for k, ck in enumerate(checkpoints[1:], start=2):
        sig = _signature(ck)
        if sig != ref:
            for (n0, s0), (n1, s1) in zip(ref, sig):
                if (n0, s0) != (n1, s1):
                    raise InputError(
                        f"checkpoint {k} signature mismatch at tensor "
                        f"'{n1}' {s1} (expected '{n0}' {s0})"
                    )
            raise InputError(f"checkpoint {k} has {len(sig)} tensors, expected {len(ref)}")
    out: Checkpoint = {}
    for name, anchor in base.items():
        delta = np.zeros(anchor.shape, dtype=np.float64)
        for ck in checkpoints[1:]:
            delta += np.asarray(ck[name], dtype=np.float64) - anchor
        if not delta.any():
            out[name] = anchor.copy()
        else:
            out[name] = (anchor + delta / len(checkpoints)).astype(anchor.dtype)
    return out


def fold_batchnorm(w, b, gamma, beta, mean, var, eps: float = 1e-5):
    """Merge a per-channel batch norm into the preceding linear layer.

    With s = gamma / sqrt(var + eps): w' = w * s (per output channel),
    b' = (b - mean) * s + beta, so the folded layer reproduces
    conv-then-BN for every input.
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    channels = w.shape[0]
    if eps <= 0:
        raise InputError(f"BN eps must be positive, got {eps}")
    stats = []
    for name, arr in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (channels,):
            raise InputError(
                f"BN parameter {name} has shape {arr.shape}, expected ({channels},)"
            )
        stats.append(arr)
    gamma, beta, mean, var = stats
    if b.shape != (channels,):
        raise InputError(f"bias has shape {b.shape}, expected ({channels},)")
    if np.any(var < 0):
        raise InputError("BN variance must be non-negative")
    scale = gamma / np.sqrt(var + eps)
    w_folded = w * scale.reshape((channels,) + (1,) * (w.ndim - 1))
    b_folded = (b - mean) * scale + beta
    return w_folded, b_folded


@dataclass(frozen=True)
class LrScheduleSpec:
    """One-cycle or SWA-cyclical learning-rate schedule parameters."""

    kind: str = "one-cycle"  # "one-cycle" | "swa-cyclical"
    lr_max: float = 3e-3
    div_factor: float = 10.0
    final_lr: float = 3e-9
    momentum_high: float = 0.95
    momentum_low: float = 0.85
    warm_fraction: float = 0.4
    steps_per_cycle: int | None = None  # required for swa-cyclical

    def __post_init__(self):
        if self.kind not in ("one-cycle", "swa-cyclical"):
            raise InputError(f"unknown schedule kind {self.kind!r}")
        if self.lr_max <= 0:
            raise InputError("lr_max must be positive")
        if self.div_factor <= 1:
            raise InputError("division factor must be > 1")
        if not 0.0 < self.warm_fraction < 1.0:
            raise InputError("warm fraction must be in (0, 1)")
        if self.kind == "swa-cyclical" and not self.steps_per_cycle:
            raise InputError("swa-cyclical schedule needs steps_per_cycle")


def main_training_schedule(lr_max: float = 3e-3) -> LrScheduleSpec:
    return LrScheduleSpec(kind="one-cycle", lr_max=lr_max)


def swa_schedule(steps_per_cycle: int, lr_max: float = 3e-4) -> LrScheduleSpec:
    return LrScheduleSpec(kind="swa-cyclical", lr_max=lr_max,
                          steps_per_cycle=steps_per_cycle)


def _cosine(a: float, b: float, t: float) -> float:
    """Cosine interpolation a -> b over t in [0, 1], exact at endpoints."""
    if t <= 0.0:
        return a
    if t >= 1.0:
        return b
    return b + (a - b) * 0.5 * (1.0 + math.cos(math.pi * t))


def lr_schedule(spec: LrScheduleSpec, step: int, total_steps: int):
    """(learning rate, momentum) at a step.

    One-cycle: cosine rise from lr_max / div_factor to lr_max over the
    warm fraction, then cosine decay to final_lr; momentum moves
    inversely between momentum_high and momentum_low. The SWA-cyclical
    flavor repeats that shape every ``steps_per_cycle`` steps.
    """
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    if spec.kind == "swa-cyclical":
        cycle = int(spec.steps_per_cycle)
        pos = step % cycle
        if step > 0 and pos == 0:
            pos = cycle  # cycle boundary counts as that cycle's end
    else:
        cycle = total_steps
        pos = step
    warm = max(1, round(spec.warm_fraction * cycle))
    warm = min(warm, cycle - 1) if cycle > 1 else warm
    lr_start = spec.lr_max / spec.div_factor
    if pos <= warm:
        t = pos / warm
        return _cosine(lr_start, spec.lr_max, t), _cosine(spec.momentum_high, spec.momentum_low, t)
    t = (pos - warm) / (cycle - warm)
    return _cosine(spec.lr_max, spec.final_lr, t), _cosine(spec.momentum_low, spec.momentum_high, t)
