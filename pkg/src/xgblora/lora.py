"""Low-rank adapter lifecycle: init, apply, merge-into-base, accounting.

An adapter pair (A, B) on a (d, k) target holds A (d, r) and B (r, k);
the effective weight is W + alpha*A@B. B starts at zero so a fresh pair
is an exact no-op, and merging mid-training never moves the loss. A set
is consumed by its merge; any further use is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xgblora.models import ModelSpec, WeightId, list_adaptable_weights, sort_key
from xgblora.tensor import Rng, ShapeError, Tensor, matmul


class AdapterError(ValueError):
    """Adapter lifecycle misuse (double merge, stale set, bad target)."""


@dataclass
class LoraPair:
    target: WeightId
    a: Tensor  # (d, r)
    b: Tensor  # (r, k)
    r: int
    alpha: float = 1.0
    _a_init: np.ndarray = None  # snapshot of A at birth (B is born zero)

    def __post_init__(self):
        if self._a_init is None:
            self._a_init = self.a.data.copy()

    @property
    def a_init(self) -> np.ndarray:
        return self._a_init

    def delta(self) -> np.ndarray:
        """Materialized alpha*A@B, detached."""
        return self.alpha * (self.a.data @ self.b.data)

    def params(self):
        return (self.a, self.b)


@dataclass
class AdapterSet:
    pairs: dict[WeightId, LoraPair]
    booster_index: int = 0
    merged: bool = field(default=False)

    def check_live(self):
        if self.merged:
            raise AdapterError(
                f"adapter set for booster {self.booster_index} was already merged"
            )

    def targets(self) -> list[WeightId]:
        return sorted(self.pairs, key=sort_key)

    def trainable_params(self) -> list[Tensor]:
        out = []
        for wid in self.targets():
            out.extend(self.pairs[wid].params())
        return out


def init_adapter(model: ModelSpec, target: WeightId, r: int, rng: Rng, alpha: float = 1.0) -> LoraPair:
    """Fresh pair on one target: A ~ 0.01 * Gaussian(0, 1/r), B = 0, so the
    effective delta is exactly zero at birth."""
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    if target not in model.weights:
        raise AdapterError(f"target {target} not present in model")
    d, k = model.weights[target].data.shape
    a = rng.gaussian((d, r)) * (0.01 / np.sqrt(r))
    pair = LoraPair(
        target=target,
        a=Tensor(a.astype(model.dtype), requires_grad=True, dtype=model.dtype),
        b=Tensor(np.zeros((r, k), dtype=model.dtype), requires_grad=True, dtype=model.dtype),
        r=r,
        alpha=alpha,
    )
    return pair


def init_adapter_set(
    model: ModelSpec,
    targets,
    r: int,
    rng: Rng,
    booster_index: int = 0,
    alpha: float = 1.0,
) -> AdapterSet:
    """One pair per target, initialized in deterministic target order."""
    pairs = {}
    for wid in sorted(targets, key=sort_key):
        if wid in pairs:
            raise AdapterError(f"duplicate adapter target {wid}")
        pairs[wid] = init_adapter(model, wid, r, rng, alpha=alpha)
    return AdapterSet(pairs=pairs, booster_index=booster_index)


def effective_weight(w0: Tensor, pair: LoraPair) -> Tensor:
    """W0 + alpha*A@B as a graph node; W0 untouched."""
    d, k = w0.data.shape
    if pair.a.data.shape != (d, pair.r) or pair.b.data.shape != (pair.r, k):
        raise ShapeError(
            f"adapter shapes A{pair.a.data.shape} B{pair.b.data.shape} "
            f"do not fit target {w0.data.shape}"
        )
    delta = matmul(pair.a, pair.b)
    if pair.alpha != 1.0:
        delta = delta * pair.alpha
    return w0 + delta


def merge_adapters(model: ModelSpec, adapters: AdapterSet) -> ModelSpec:
    """Fold every pair into its base weight in place: W += alpha*A@B.

    The set is consumed; a second merge (or any later forward through it)
    raises. Returns the same model for chaining.
    """
    adapters.check_live()
    for wid in adapters.targets():
        if wid not in model.weights:
            raise AdapterError(f"merge target {wid} not present in model")
    for wid in adapters.targets():
        pair = adapters.pairs[wid]
        w = model.weights[wid]
        if pair.a.data.shape[0] != w.data.shape[0] or pair.b.data.shape[1] != w.data.shape[1]:
            raise ShapeError(
                f"adapter for {wid} has shape A{pair.a.data.shape} B{pair.b.data.shape}, "
                f"target is {w.data.shape}"
            )
        w.data = w.data + pair.delta().astype(model.dtype)
    adapters.merged = True
    return model


def param_count(model: ModelSpec, adapters=None, policy=None, r=None, layers=None, include_embedding=False) -> dict:
    """Trainable/total/permille accounting.

    Pass an AdapterSet to count its live pairs, or (policy, r[, layers]) to
    count a hypothetical configuration over the adaptable weights. With
    neither, every weight is trainable (full fine-tuning: exactly 1000
    permille).
    """
    total = model.total_params()
    if adapters is not None:
        trainable = sum(
            pair.a.data.size + pair.b.data.size for pair in adapters.pairs.values()
        )
    elif policy is not None:
        if r is None or r < 1:
            raise ValueError(f"rank must be >= 1, got {r}")
        targets = list_adaptable_weights(model, policy=policy, include_embedding=include_embedding)
        if layers is not None:
            layers = set(layers)
            targets = [wid for wid in targets if wid.layer in layers]
        trainable = sum(
            (model.weights[wid].data.shape[0] + model.weights[wid].data.shape[1]) * r
            for wid in targets
        )
    else:
        trainable = total
    return {
        "trainable": trainable,
        "total": total,
        "permille": 1000.0 * trainable / total,
    }
