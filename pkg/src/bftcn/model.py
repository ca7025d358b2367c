"""Multi-stage TCN: one dual-dilated prediction generator plus N_R refinement stages.

Parameters live in a flat, ordered ``name -> ndarray`` dict so the optimizer
and the checkpoint writer can walk them without knowing the architecture.
Layer objects are thin views over that dict, built on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import seqcore as sc
from .window import LayerAddress, NetworkConfig, Stage, dilation_factors, future_pad


@dataclass
class ModelParameters:
    config: NetworkConfig
    n_input: int
    params: dict[str, np.ndarray]
    seed: int = 0
    dropout_p: float = 0.5
    classes: list[str] | None = None

    @property
    def n_stages(self) -> int:
        return 1 + self.config.n_r

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, self.n_input,
                               {k: v.copy() for k, v in self.params.items()},
                               self.seed, self.dropout_p,
                               None if self.classes is None else list(self.classes))

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass(frozen=True)
class ConvSpec:
    """Where a dilated convolution lives and how it is padded."""
    name: str
    dilation: int
    future_pad: int


@dataclass(frozen=True)
class LayerSpec:
    prefix: str
    address: LayerAddress
    convs: tuple[ConvSpec, ...]  # one branch for DRL, two for DDRL

    @property
    def dual(self) -> bool:
        return len(self.convs) == 2

    @property
    def future_reach(self) -> int:
        return max(c.future_pad for c in self.convs)

    @property
    def past_reach(self) -> int:
        return max(2 * c.dilation - c.future_pad for c in self.convs)


@dataclass(frozen=True)
class StageSpec:
    prefix: str
    in_dim: int
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)


def stage_layout(cfg: NetworkConfig, n_input: int) -> list[StageSpec]:
    stages = []
    layers = []
    for i in range(1, cfg.l_pg + 1):
        addr = LayerAddress(Stage.PREDICTION_GENERATOR, i)
        d1, d2 = dilation_factors(cfg, addr)
        p = f"pg.L{i}"
        layers.append(LayerSpec(p, addr, (ConvSpec(f"{p}.conv1", d1, future_pad(cfg, d1)),
                                          ConvSpec(f"{p}.conv2", d2, future_pad(cfg, d2)))))
    stages.append(StageSpec("pg", n_input, tuple(layers)))
    for s in range(1, cfg.n_r + 1):
        layers = []
        for i in range(1, cfg.l_r + 1):
            addr = LayerAddress(Stage.REFINEMENT, i)
            d1, _ = dilation_factors(cfg, addr)
            p = f"r{s}.L{i}"
            layers.append(LayerSpec(p, addr, (ConvSpec(f"{p}.conv", d1, future_pad(cfg, d1)),)))
        stages.append(StageSpec(f"r{s}", cfg.n_classes, tuple(layers)))
    return stages


def _param_shapes(cfg: NetworkConfig, n_input: int) -> Iterator[tuple[str, tuple, int]]:
    """Yield ``(name, shape, fan_in)`` in the canonical parameter order."""
    nf, nc = cfg.n_feature_maps, cfg.n_classes

    def affine(name, out, inp, k=None):
        wshape = (out, inp) if k is None else (out, inp, k)
        fan_in = inp * (k or 1)
        yield f"{name}.w", wshape, fan_in
        yield f"{name}.b", (out,), fan_in

    for stage in stage_layout(cfg, n_input):
        yield from affine(f"{stage.prefix}.in", nf, stage.in_dim)
        for layer in stage.layers:
            for conv in layer.convs:
                yield from affine(conv.name, nf, nf, 3)
            if layer.dual:
                yield from affine(f"{layer.prefix}.merge", nf, 2 * nf)
            yield from affine(f"{layer.prefix}.out", nf, nf)
        yield from affine(f"{stage.prefix}.head", nc, nf)


def build_model(cfg: NetworkConfig, seed: int = 0, *, n_input: int,
                dropout_p: float = 0.5, classes: list[str] | None = None) -> ModelParameters:
    """Allocate a network with seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    if n_input < 1:
        raise ValueError(f"feature dimension must be positive, got {n_input}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in _param_shapes(cfg, n_input):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParameters(cfg, n_input, params, seed, dropout_p, classes)


def _pw(model: ModelParameters, name: str) -> sc.PointwiseConvLayer:
    return sc.PointwiseConvLayer(model.params[f"{name}.w"], model.params[f"{name}.b"])


def _conv(model: ModelParameters, spec: ConvSpec) -> sc.DilatedConvLayer:
    return sc.DilatedConvLayer(model.params[f"{spec.name}.w"], model.params[f"{spec.name}.b"],
                               spec.dilation, spec.future_pad)


# -- residual layers ---------------------------------------------------------

def residual_forward(model: ModelParameters, layer: LayerSpec, x: np.ndarray,
                     training: bool = False, rng=None):
    """One DRL or DDRL. Returns ``(y, cache)``.

    DRL:  y = x + drop(out(relu(conv(x))))
    DDRL: y = x + drop(out(relu(merge([conv1(x); conv2(x)]))))
    """
    branches = [sc.dilated_conv_forward(_conv(model, c), x) for c in layer.convs]
    if layer.dual:
        h = sc.pointwise_conv(_pw(model, f"{layer.prefix}.merge"), np.concatenate(branches))
    else:
        h = branches[0]
    a = sc.relu(h)
    u = sc.pointwise_conv(_pw(model, f"{layer.prefix}.out"), a)
    d, mask = sc.dropout(u, model.dropout_p, rng, training)
    return x + d, (x, branches, h, a, mask)


def residual_backward(model: ModelParameters, layer: LayerSpec, cache, grad_y, grads: dict):
    x, branches, h, a, mask = cache
    gu = sc.dropout_backward(mask, grad_y)
    ga, gw, gb = sc.pointwise_conv_backward(_pw(model, f"{layer.prefix}.out"), a, gu)
    _accumulate(grads, f"{layer.prefix}.out", gw, gb)
    gh = sc.relu_backward(h, ga)
    if layer.dual:
        cat = np.concatenate(branches)
        gcat, gw, gb = sc.pointwise_conv_backward(_pw(model, f"{layer.prefix}.merge"), cat, gh)
        _accumulate(grads, f"{layer.prefix}.merge", gw, gb)
        nf = branches[0].shape[0]
        gbranches = [gcat[:nf], gcat[nf:]]
    else:
        gbranches = [gh]
    gx = grad_y.copy()
    for conv, g in zip(layer.convs, gbranches):
        gxc, gw, gb = sc.dilated_conv_backward(_conv(model, conv), x, g)
        _accumulate(grads, conv.name, gw, gb)
        gx += gxc
    return gx


def ddrl_forward(model: ModelParameters, layer: LayerSpec, x, training=False, rng=None):
    if not layer.dual:
        raise ValueError(f"{layer.prefix} is a single-branch layer")
    return residual_forward(model, layer, sc.as_ct(x, model.config.n_feature_maps), training, rng)[0]


def drl_forward(model: ModelParameters, layer: LayerSpec, x, training=False, rng=None):
    if layer.dual:
        raise ValueError(f"{layer.prefix} is a dual-branch layer")
    return residual_forward(model, layer, sc.as_ct(x, model.config.n_feature_maps), training, rng)[0]


def _accumulate(grads: dict, name: str, gw, gb) -> None:
    for key, g in ((f"{name}.w", gw), (f"{name}.b", gb)):
        if key in grads:
            grads[key] += g
        else:
            grads[key] = g.copy()


# -- full network ------------------------------------------------------------

def _check_features(model: ModelParameters, features) -> np.ndarray:
    x = np.asarray(features, dtype=sc.DTYPE)
    if x.ndim != 2:
        raise sc.ShapeError(f"features must be (frames, dims), got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("cannot run a network on an empty sequence")
    if x.shape[1] != model.n_input:
        raise sc.ShapeError(f"model expects {model.n_input}-dim features, got {x.shape[1]}")
    return x.T


def forward_logits(model: ModelParameters, features, training: bool = False, rng=None):
    """Return ``(stage_logits, stage_probs, cache)``; ``features`` is (T, n_input)."""
    x = _check_features(model, features)
    logits, probs, cache = [], [], []
    inp = x
    for stage in stage_layout(model.config, model.n_input):
        z = sc.pointwise_conv(_pw(model, f"{stage.prefix}.in"), inp)
        layer_caches = []
        for layer in stage.layers:
            z, c = residual_forward(model, layer, z, training, rng)
            layer_caches.append(c)
        out = sc.pointwise_conv(_pw(model, f"{stage.prefix}.head"), z)
        p = sc.softmax_over_channels(out)
        cache.append((stage, inp, layer_caches, z))
        logits.append(out)
        probs.append(p)
        inp = p
    return logits, probs, cache


def forward(model: ModelParameters, features, training: bool = False, rng=None) -> list[np.ndarray]:
    """Per-stage class probabilities, each ``(n_classes, T)``."""
    return forward_logits(model, features, training, rng)[1]


def predict(model: ModelParameters, features) -> np.ndarray:
    return forward(model, features)[-1].argmax(axis=0)


def backward(model: ModelParameters, stage_probs, cache, grad_logits) -> dict[str, np.ndarray]:
    """Parameter gradients given loss gradients w.r.t. every stage's logits.

    Refinement stages consume the previous stage's probabilities, so the
    gradient reaching a stage input is pushed back through that softmax and
    added to the previous stage's logit gradient.
    """
    return _backprop(model, stage_probs, cache, grad_logits)[0]


def input_gradient(model: ModelParameters, features, grad_probs) -> np.ndarray:
    """Gradient of ``sum(grad_probs * final_probs)`` w.r.t. ``features``, shape (T, n_input)."""
    _, probs, cache = forward_logits(model, features)
    grad_logits = [np.zeros_like(p) for p in probs]
    grad_logits[-1] = sc.softmax_backward(probs[-1], np.asarray(grad_probs, dtype=sc.DTYPE))
    return _backprop(model, probs, cache, grad_logits)[1].T


def _backprop(model, stage_probs, cache, grad_logits):
    grads: dict[str, np.ndarray] = {}
    carry = None
    for s in range(len(cache) - 1, -1, -1):
        stage, inp, layer_caches, z = cache[s]
        g_out = grad_logits[s].copy()
        if carry is not None:
            g_out += sc.softmax_backward(stage_probs[s], carry)
        gz, gw, gb = sc.pointwise_conv_backward(_pw(model, f"{stage.prefix}.head"), z, g_out)
        _accumulate(grads, f"{stage.prefix}.head", gw, gb)
        for layer, c in zip(reversed(stage.layers), reversed(layer_caches)):
            gz = residual_backward(model, layer, c, gz, grads)
        carry, gw, gb = sc.pointwise_conv_backward(_pw(model, f"{stage.prefix}.in"), inp, gz)
        _accumulate(grads, f"{stage.prefix}.in", gw, gb)
    return {k: grads[k] for k in model.params}, carry
