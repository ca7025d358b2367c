"""Future-window arithmetic for RR and BF multi-stage TCNs.

Every (D)DRL pads its dilated convolutions with ``m`` zero columns after the
input and ``2*delta - m`` before it, so layer output at frame ``t`` can read
input frames up to ``t + m``. The future window of a network is the sum of
those per-layer reaches over all layers in all stages.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Iterator, NamedTuple


class Variant(str, enum.Enum):
    RR = "RR"  # symmetric convolutions, future bounded only by depth
    BF = "BF"  # per-layer future padding capped at w_max

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected 'RR' or 'BF'") from None


class Stage(str, enum.Enum):
    PREDICTION_GENERATOR = "PG"
    REFINEMENT = "R"


class AddressError(IndexError):
    """Layer index outside the stage it names."""


class InconclusiveMeasurement(RuntimeError):
    """Perturbation horizon too short to observe the whole future window."""


@dataclass(frozen=True)
class NetworkConfig:
    variant: Variant
    l_pg: int
    l_r: int
    n_r: int
    w_max: int = 0
    n_feature_maps: int = 128
    n_classes: int = 6
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("l_pg", "l_r", "n_feature_maps", "n_classes"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        for name in ("n_r", "w_max"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame_rate_hz must be positive, got {self.frame_rate_hz!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)

    @property
    def n_layers_total(self) -> int:
        return self.l_pg + self.n_r * self.l_r


@dataclass(frozen=True)
class LayerAddress:
    stage: Stage
    index: int  # 1-based, as in the layer numbering of the dilation formula


def _stage_depth(cfg: NetworkConfig, stage: Stage) -> int:
    return cfg.l_pg if stage is Stage.PREDICTION_GENERATOR else cfg.l_r


def _check_address(cfg: NetworkConfig, addr: LayerAddress) -> None:
    depth = _stage_depth(cfg, Stage(addr.stage))
    if not 1 <= addr.index <= depth:
        raise AddressError(
            f"layer {addr.index} out of range for {Stage(addr.stage).name} stage with {depth} layers"
        )


def dilation_factors(cfg: NetworkConfig, addr: LayerAddress) -> tuple[int, int | None]:
    """Dilations of the convolution branches at ``addr``.

    Refinement layers have a single branch, ``2**(l-1)``. Prediction-generator
    layers add a second branch with the reversed schedule ``2**(L_PG-l)``.
    """
    _check_address(cfg, addr)
    d1 = 2 ** (addr.index - 1)
    if Stage(addr.stage) is Stage.REFINEMENT:
        return d1, None
    return d1, 2 ** (cfg.l_pg - addr.index)


def future_pad(cfg: NetworkConfig, dilation: int) -> int:
    """Number of zero columns appended after the input of one convolution."""
    if cfg.variant is Variant.RR:
        return dilation
    return min(cfg.w_max, dilation)


def direct_future_window(cfg: NetworkConfig, addr: LayerAddress) -> int:
    d1, d2 = dilation_factors(cfg, addr)
    m = future_pad(cfg, d1)
    if d2 is not None:
        m = max(m, future_pad(cfg, d2))
    return m


def layer_addresses(cfg: NetworkConfig) -> Iterator[LayerAddress]:
    """All layers in network order; refinement addresses repeat per stage."""
    for i in range(1, cfg.l_pg + 1):
        yield LayerAddress(Stage.PREDICTION_GENERATOR, i)
    for _ in range(cfg.n_r):
        for i in range(1, cfg.l_r + 1):
            yield LayerAddress(Stage.REFINEMENT, i)


def future_window(cfg: NetworkConfig) -> int:
    """Total future window in frames (sum of per-layer direct windows)."""
    pg = sum(direct_future_window(cfg, LayerAddress(Stage.PREDICTION_GENERATOR, i))
             for i in range(1, cfg.l_pg + 1))
    r = sum(direct_future_window(cfg, LayerAddress(Stage.REFINEMENT, i))
            for i in range(1, cfg.l_r + 1))
    return pg + cfg.n_r * r


def future_window_seconds(cfg: NetworkConfig) -> float:
    return future_window(cfg) / cfg.frame_rate_hz


def saturating_w_max(cfg: NetworkConfig) -> int:
    """Smallest w_max at which a BF network has the same window as RR."""
    return 2 ** (max(cfg.l_pg, cfg.l_r) - 1)


# Delay buckets in seconds; first bucket is closed, the rest are (lo, hi].
BUCKET_EDGES: tuple[float, ...] = (0.0, 0.001, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0,
                                   16.0, 32.0, 64.0, math.inf)


class DelayBucket(NamedTuple):
    index: int
    low: float
    high: float

    @property
    def label(self) -> str:
        if math.isinf(self.high):
            return f"({self.low:g}, inf)"
        if self.index == 0:
            return f"[{self.low:g}, {self.high:g}]"
        return f"({self.low:g}, {self.high:g}]"


def all_buckets() -> list[DelayBucket]:
    return [DelayBucket(i, BUCKET_EDGES[i], BUCKET_EDGES[i + 1])
            for i in range(len(BUCKET_EDGES) - 1)]


def bucket_delay(fw_seconds: float) -> DelayBucket:
    if not fw_seconds >= 0:
        raise ValueError(f"delay must be non-negative, got {fw_seconds!r}")
    for bucket in all_buckets():
        if fw_seconds <= bucket.high:
            return bucket
    raise AssertionError("unreachable: last bucket is unbounded")


# Default hyperparameter grids for `window --enumerate` (L_PG = L_R = L).
DEFAULT_GRIDS: tuple[dict, ...] = (
    {"variant": "RR", "L": (2, 3, 4, 5, 6, 8, 10), "n_r": (0, 1, 2, 3), "w_max": (0,)},
    {"variant": "BF", "L": (6, 8, 10), "n_r": (0, 1, 2, 3),
     "w_max": (0, 1, 2, 3, 6, 7, 8, 10, 12, 13, 14, 15, 16, 17, 20)},
    {"variant": "BF", "L": (2, 3, 4, 5), "n_r": (0, 1, 2, 3),
     "w_max": (1, 3, 7, 10, 12, 15, 17)},
)


def enumerate_configs(grids: Iterable[dict] = DEFAULT_GRIDS, budget_seconds: float | None = None,
                      **shared) -> list[NetworkConfig]:
    """Expand grid dicts into configs, optionally keeping only FW <= budget.

    ``shared`` fields (n_feature_maps, n_classes, frame_rate_hz) apply to all.
    Duplicate configs across grids are dropped, first occurrence wins.
    """
    seen = set()
    out = []
    for grid in grids:
        for L in grid["L"]:
            for n_r in grid["n_r"]:
                for w in grid.get("w_max", (0,)):
                    cfg = NetworkConfig(grid["variant"], L, L, n_r, w, **shared)
                    if cfg in seen:
                        continue
                    seen.add(cfg)
                    if budget_seconds is not None and future_window_seconds(cfg) > budget_seconds:
                        continue
                    out.append(cfg)
    return out


def measure_future_window(model, cfg: NetworkConfig | None = None, t: int = 0,
                          horizon: int | None = None, seed: int = 0,
                          scales: tuple[float, ...] = (1.0, 30.0), n_probes: int = 3) -> int:
    """Empirically find the furthest future input frame that moves output ``t``.

    Two witnesses of dependence are combined, and the answer is the largest
    offset ``d`` for which either fires:

    * finite perturbation: frame ``t + d`` of a random input is kicked at each
      magnitude in ``scales`` and the final-stage probabilities at ``t`` are
      compared exactly;
    * first order: the gradient of a random projection of output column ``t``
      w.r.t. the input, evaluated at ``n_probes`` random inputs, is nonzero at
      frame ``t + d``.

    Through several refinement stages the influence of the furthest frame can
    shrink below half an ulp of the O(1) values it is added to, so the finite
    probe alone under-reports on deep networks. The gradient carries the same
    dependence as a product of small factors and does not round away. Neither
    witness can fire beyond the true reach, because no path exists there.
    Comparison is exact, so this only makes sense in 64-bit eval mode.
    """
    import numpy as np

    from .model import forward, input_gradient

    cfg = model.config if cfg is None else cfg
    expected = future_window(cfg)
    if horizon is None:
        horizon = expected + 1
    if horizon < expected:
        raise InconclusiveMeasurement(
            f"horizon {horizon} is shorter than the predicted window {expected}"
        )
    rng = np.random.default_rng(seed)
    n_in = model.n_input
    T = t + horizon + 1
    reach = 0
    for _ in range(n_probes):
        x = rng.standard_normal((T, n_in))
        r = np.zeros((cfg.n_classes, T))
        r[:, t] = rng.standard_normal(cfg.n_classes)
        g = input_gradient(model, x, r)
        moved = np.flatnonzero(np.any(g[t + 1:] != 0, axis=1))
        if moved.size:
            reach = max(reach, int(moved[-1]) + 1)

    x = rng.standard_normal((T, n_in))
    base = forward(model, x)[-1][:, t]
    for d in range(reach + 1, horizon + 1):
        for scale in scales:
            xp = x.copy()
            xp[t + d] += scale * rng.standard_normal(n_in)
            if np.any(forward(model, xp)[-1][:, t] != base):
                reach = d
                break
    return reach
