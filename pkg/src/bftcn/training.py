"""MS-TCN++ loss, Adam, and the epoch loop with F1@50 model selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seqcore as sc
from .metrics import evaluate, summarize
from .model import ModelParameters, backward, forward_logits, predict
from .window import future_window, future_window_seconds

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossConfig:
    smoothing_weight: float = 1.0  # lambda
    tau: float = 4.0  # clip threshold on |delta log p|; tau**2 = 16

    def __post_init__(self):
        if self.smoothing_weight < 0:
            raise ValueError("smoothing weight must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def _log_probs(probs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(probs, PROB_FLOOR))


def smoothing_terms(probs: np.ndarray, tau: float = 4.0) -> np.ndarray:
    """Per-element truncated squared log-prob differences, shape (C, T-1)."""
    logp = _log_probs(probs)
    delta = logp[:, 1:] - logp[:, :-1]
    return np.minimum(delta * delta, tau * tau)


def mstcn_loss(stage_probs: Sequence[np.ndarray], labels, lc: LossConfig = LossConfig(),
               reference_probs: Sequence[np.ndarray] | None = None):
    """Cross-entropy plus truncated smoothing loss, summed over stages.

    Returns ``(loss, grad_logits)`` with one (C, T) gradient per stage. The
    smoothing term treats the previous frame's log-probability as a constant,
    so the returned gradient is the exact derivative of the loss in which
    previous frames are read from ``reference_probs`` (default: the inputs
    themselves, frozen).
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-D sequence")
    T = labels.size
    total = 0.0
    grads = []
    if reference_probs is None:
        reference_probs = stage_probs
    for probs, ref in zip(stage_probs, reference_probs):
        C = probs.shape[0]
        if probs.shape != (C, T):
            raise sc.ShapeError(f"stage output {probs.shape} does not match {T} labels")
        if labels.min() < 0 or labels.max() >= C:
            raise ValueError(f"label out of range [0, {C})")
        logp = _log_probs(probs)
        g_logp = np.zeros_like(logp)
        frames = np.arange(T)
        total += -logp[labels, frames].mean()
        g_logp[labels, frames] -= 1.0 / T
        if T > 1 and lc.smoothing_weight:
            delta = logp[:, 1:] - _log_probs(ref)[:, :-1]
            sq = delta * delta
            clip = lc.tau * lc.tau
            n = C * (T - 1)
            total += lc.smoothing_weight * np.minimum(sq, clip).sum() / n
            g_logp[:, 1:] += lc.smoothing_weight * np.where(sq < clip, 2.0 * delta, 0.0) / n
        grads.append(g_logp - probs * g_logp.sum(axis=0, keepdims=True))
    return float(total), grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {k} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in params:
        g = grads[k]
        if params[k].shape != g.shape:
            raise sc.ShapeError(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def loss_and_grads(model: ModelParameters, features, labels, lc: LossConfig = LossConfig(),
                   training: bool = False, rng=None, reference_probs=None):
    _, probs, cache = forward_logits(model, features, training, rng)
    loss, g_logits = mstcn_loss(probs, labels, lc, reference_probs)
    return loss, backward(model, probs, cache, g_logits)


def evaluate_model(model: ModelParameters, dataset) -> dict:
    """Summary (mean/std over videos) of every metric on ``dataset``."""
    fw = future_window(model.config)
    fws = future_window_seconds(model.config)
    reports = [evaluate(predict(model, x), y, model.config.n_classes, fw, fws) for x, y in dataset]
    return summarize(reports)


def _check_dataset(model: ModelParameters, dataset, name: str) -> None:
    if not dataset:
        raise ValueError(f"{name} set is empty")
    for i, (x, y) in enumerate(dataset):
        if np.shape(x)[1] != model.n_input:
            raise sc.ShapeError(f"{name} video {i} has {np.shape(x)[1]}-dim features, model expects {model.n_input}")
        if np.shape(x)[0] != len(y):
            raise sc.ShapeError(f"{name} video {i}: {np.shape(x)[0]} frames but {len(y)} labels")


def train(model: ModelParameters, train_set, val_set, epochs: int = 40, batch_size: int = 2,
          seed: int = 0, lr: float = 1e-3, loss_config: LossConfig = LossConfig()):
    """Train in place and return ``(best_model, history)``.

    Each batch averages per-video gradients (no cross-video padding) and takes
    one Adam step. After every epoch the model is scored on ``val_set``; the
    returned copy is the one with the highest validation F1@50, earliest epoch
    on ties.
    """
    _check_dataset(model, train_set, "train")
    _check_dataset(model, val_set, "validation")
    if batch_size < 1 or epochs < 1:
        raise ValueError("epochs and batch_size must be positive")
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    history = []
    best, best_score = None, -math.inf
    n = len(train_set)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(0, n, batch_size):
            idx = order[b:b + batch_size]
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for i in idx:
                x, y = train_set[i]
                loss, grads = loss_and_grads(model, x, y, loss_config, training=True, rng=rng)
                epoch_loss += loss
                for k, g in grads.items():
                    acc[k] += g
            for k in acc:
                acc[k] /= len(idx)
            adam_step(opt, model.params, acc)
        val = evaluate_model(model, val_set)
        score = val["mean"]["f1@50"]
        history.append({"epoch": epoch, "train_loss": epoch_loss / n, "steps": opt.step,
                        "val": val["mean"]})
        log.info("epoch %d loss %.4f val F1@50 %.2f", epoch, epoch_loss / n, score)
        if score > best_score:
            best, best_score = model.copy(), score
    return best, history
