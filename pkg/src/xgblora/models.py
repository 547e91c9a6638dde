"""Small networks with individually addressable weight matrices.

Two model kinds: an L-layer MLP (first layer linear, middle layers
activated, last layer feeding the output map) and a tiny decoder-style
transformer with pre-norm residual blocks, learned positional embeddings
and causal masking. All weights live in a flat {WeightId: Tensor} map so
adapters can target any matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from xgblora.tensor import (
    Rng,
    ShapeError,
    Tensor,
    cross_entropy_logits,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mse,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
    tsum,
)

ATTN_MASK_NEG = -1e30  # finite stand-in for -inf so tensors stay NaN/Inf-free


class Role(str, Enum):
    EMBEDDING = "embedding"
    POS_EMBEDDING = "pos_embedding"
    ATTN_Q = "attn_q"
    ATTN_K = "attn_k"
    ATTN_V = "attn_v"
    ATTN_O = "attn_o"
    FFN_UP = "ffn_up"
    FFN_DOWN = "ffn_down"
    MLP_DENSE = "mlp_dense"
    OUTPUT = "output"


# canonical role-minor ordering inside a layer
ROLE_ORDER = {r: i for i, r in enumerate(Role)}


class WeightId(NamedTuple):
    layer: int
    role: Role

    def __str__(self):
        return f"L{self.layer}.{self.role.value}"


def sort_key(wid: WeightId):
    return (wid.layer, ROLE_ORDER[wid.role])


@dataclass
class ModelSpec:
    """A layered network: structural parameters plus the weight map."""

    kind: str  # "mlp" | "tiny_transformer"
    layers: int
    activation: str  # "relu" | "gelu"
    output_map: str  # "identity-mse" | "softmax-ce"
    weights: dict[WeightId, Tensor]
    dims: Optional[list[int]] = None  # mlp only
    vocab: Optional[int] = None
    d_model: Optional[int] = None
    n_heads: Optional[int] = None
    d_ff: Optional[int] = None
    max_seq: Optional[int] = None
    tie_output: bool = False
    dtype: np.dtype = np.float64

    def structure(self) -> dict:
        """JSON-serializable structural description (no weight values)."""
        return {
            "kind": self.kind,
            "layers": self.layers,
            "activation": self.activation,
            "output_map": self.output_map,
            "dims": self.dims,
            "vocab": self.vocab,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "max_seq": self.max_seq,
            "tie_output": self.tie_output,
            "dtype": "f32" if np.dtype(self.dtype) == np.float32 else "f64",
        }

    @classmethod
    def from_structure(cls, s: dict, weights: dict[WeightId, Tensor]) -> "ModelSpec":
        return cls(
            kind=s["kind"],
            layers=s["layers"],
            activation=s["activation"],
            output_map=s["output_map"],
            weights=weights,
            dims=s.get("dims"),
            vocab=s.get("vocab"),
            d_model=s.get("d_model"),
            n_heads=s.get("n_heads"),
            d_ff=s.get("d_ff"),
            max_seq=s.get("max_seq"),
            tie_output=s.get("tie_output", False),
            dtype=np.float32 if s.get("dtype") == "f32" else np.float64,
        )

    def copy(self) -> "ModelSpec":
        """Deep copy of weights; structure shared by value."""
        weights = {
            wid: Tensor(w.data.copy(), requires_grad=False, dtype=self.dtype)
            for wid, w in self.weights.items()
        }
        return ModelSpec.from_structure(self.structure(), weights)

    def total_params(self) -> int:
        return sum(w.data.size for w in self.weights.values())


@dataclass
class Dataset:
    """Paired inputs/targets. Inputs are float features (N, d) or integer
    token sequences (N, seq); targets are float arrays or integer labels."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ShapeError(
                f"inputs ({len(self.inputs)}) and targets ({len(self.targets)}) disagree"
            )
        if len(self.inputs) < 1:
            raise ShapeError("dataset needs at least one example")

    @property
    def n(self) -> int:
        return len(self.inputs)

    def batch(self, indices) -> "Batch":
        idx = np.asarray(indices)
        return Batch(self.inputs[idx], self.targets[idx])

    def full_batch(self) -> "Batch":
        return Batch(self.inputs, self.targets)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) < 1:
            raise ShapeError("batch must be non-empty")

    @property
    def size(self) -> int:
        return len(self.inputs)


def _gauss_init(rng: Rng, shape, dtype) -> Tensor:
    """Gaussian scale 1/sqrt(fan_in); fan_in is the trailing dim."""
    fan_in = shape[-1]
    w = rng.gaussian(shape) / math.sqrt(fan_in)
    return Tensor(w.astype(dtype), requires_grad=False, dtype=dtype)


def build_mlp(dims, activation="relu", output_map="identity-mse", rng=None, dtype=np.float64) -> ModelSpec:
    """L-layer MLP from dims=[d0, d1, ..., dL]; weight i is (d_i, d_{i-1})."""
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError(f"build_mlp needs at least [d_in, d_out], got {dims}")
    rng = rng or Rng(0)
    weights = {}
    for i in range(1, len(dims)):
        weights[WeightId(i, Role.MLP_DENSE)] = _gauss_init(rng, (dims[i], dims[i - 1]), dtype)
    return ModelSpec(
        kind="mlp",
        layers=len(dims) - 1,
        activation=activation,
        output_map=output_map,
        weights=weights,
        dims=dims,
        dtype=dtype,
    )


def build_transformer(
    vocab,
    d_model,
    n_layers,
    n_heads,
    d_ff,
    rng=None,
    max_seq=64,
    activation="gelu",
    tie_output=False,
    dtype=np.float64,
) -> ModelSpec:
    """Decoder-only transformer: per block AttnQ/K/V/O (d_model square) and
    FfnUp (d_ff, d_model) / FfnDown (d_model, d_ff), plus embedding, learned
    positional embedding, and an output head (tied to the embedding when
    requested)."""
    if d_model % n_heads != 0:
        raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
    rng = rng or Rng(0)
    weights = {}
    weights[WeightId(1, Role.EMBEDDING)] = _gauss_init(rng, (vocab, d_model), dtype)
    weights[WeightId(1, Role.POS_EMBEDDING)] = _gauss_init(rng, (max_seq, d_model), dtype)
    for l in range(1, n_layers + 1):
        weights[WeightId(l, Role.ATTN_Q)] = _gauss_init(rng, (d_model, d_model), dtype)
        weights[WeightId(l, Role.ATTN_K)] = _gauss_init(rng, (d_model, d_model), dtype)
        weights[WeightId(l, Role.ATTN_V)] = _gauss_init(rng, (d_model, d_model), dtype)
        weights[WeightId(l, Role.ATTN_O)] = _gauss_init(rng, (d_model, d_model), dtype)
        weights[WeightId(l, Role.FFN_UP)] = _gauss_init(rng, (d_ff, d_model), dtype)
        weights[WeightId(l, Role.FFN_DOWN)] = _gauss_init(rng, (d_model, d_ff), dtype)
    if not tie_output:
        weights[WeightId(n_layers, Role.OUTPUT)] = _gauss_init(rng, (vocab, d_model), dtype)
    return ModelSpec(
        kind="tiny_transformer",
        layers=n_layers,
        activation=activation,
        output_map="softmax-ce",
        weights=weights,
        vocab=vocab,
        d_model=d_model,
        n_heads=n_heads,
        d_ff=d_ff,
        max_seq=max_seq,
        tie_output=tie_output,
        dtype=dtype,
    )


def list_adaptable_weights(model: ModelSpec, policy="qv", include_embedding=False) -> list[WeightId]:
    """Deterministic (layer-major, role-minor) list of adapter targets.

    policy "qv" restricts transformer blocks to the attention query/value
    matrices; "all" widens to all six per-block matrices. Embedding and
    output head are excluded unless include_embedding is set. MLPs expose
    every dense matrix regardless of policy.
    """
    if policy not in ("qv", "all"):
        raise ValueError(f"unknown adapt policy {policy!r}")
    if model.kind == "mlp":
        ids = [wid for wid in model.weights if wid.role == Role.MLP_DENSE]
    else:
        block_roles = (
            (Role.ATTN_Q, Role.ATTN_V)
            if policy == "qv"
            else (Role.ATTN_Q, Role.ATTN_K, Role.ATTN_V, Role.ATTN_O, Role.FFN_UP, Role.FFN_DOWN)
        )
        ids = [wid for wid in model.weights if wid.role in block_roles]
        if include_embedding:
            ids += [
                wid
                for wid in model.weights
                if wid.role in (Role.EMBEDDING, Role.OUTPUT)
            ]
    return sorted(ids, key=sort_key)


def _resolve_weights(model: ModelSpec, adapters, collect):
    """Map wid -> effective weight tensor, materializing W + alpha*A@B for
    adapted matrices so merged and adapted forwards share the same float
    path. Base weights are never mutated."""
    eff = {}
    pairs = {}
    if adapters is not None:
        adapters.check_live()
        pairs = adapters.pairs
    for wid, w in model.weights.items():
        pair = pairs.get(wid)
        if pair is None:
            eff[wid] = w
        else:
            delta = matmul(pair.a, pair.b)
            if pair.alpha != 1.0:
                delta = delta * pair.alpha
            eff[wid] = w + delta
            if collect is not None:
                collect[wid] = eff[wid]
    return eff


def _activate(h: Tensor, activation: str) -> Tensor:
    return relu(h) if activation == "relu" else gelu(h)


def _mlp_forward(model: ModelSpec, x: Tensor, eff) -> Tensor:
    h = matmul(x, transpose(eff[WeightId(1, Role.MLP_DENSE)]))
    for i in range(2, model.layers):
        h = _activate(matmul(h, transpose(eff[WeightId(i, Role.MLP_DENSE)])), model.activation)
    if model.layers >= 2:
        h = matmul(h, transpose(eff[WeightId(model.layers, Role.MLP_DENSE)]))
    return h


def _causal_mask(seq, dtype) -> Tensor:
    m = np.triu(np.full((seq, seq), ATTN_MASK_NEG, dtype=dtype), k=1)
    return Tensor(m, requires_grad=False, dtype=dtype)


def _transformer_forward(model: ModelSpec, ids: np.ndarray, eff) -> Tensor:
    b, seq = ids.shape
    if seq > model.max_seq:
        raise ShapeError(f"sequence length {seq} exceeds max_seq {model.max_seq}")
    d, n_heads = model.d_model, model.n_heads
    d_head = d // n_heads

    tok = embedding(eff[WeightId(1, Role.EMBEDDING)], ids)
    pos = embedding(eff[WeightId(1, Role.POS_EMBEDDING)], np.arange(seq))
    x = tok + pos
    mask = _causal_mask(seq, model.dtype)

    for l in range(1, model.layers + 1):
        a = layer_norm(x)
        q = matmul(a, transpose(eff[WeightId(l, Role.ATTN_Q)]))
        k = matmul(a, transpose(eff[WeightId(l, Role.ATTN_K)]))
        v = matmul(a, transpose(eff[WeightId(l, Role.ATTN_V)]))
        # (b, seq, d) -> (b, heads, seq, d_head)
        q = transpose(reshape(q, (b, seq, n_heads, d_head)), 1, 2)
        k = transpose(reshape(k, (b, seq, n_heads, d_head)), 1, 2)
        v = transpose(reshape(v, (b, seq, n_heads, d_head)), 1, 2)
        scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(d_head))
        attn = softmax(scores + mask)
        ctx = reshape(transpose(matmul(attn, v), 1, 2), (b, seq, d))
        x = x + matmul(ctx, transpose(eff[WeightId(l, Role.ATTN_O)]))

        a2 = layer_norm(x)
        h = _activate(matmul(a2, transpose(eff[WeightId(l, Role.FFN_UP)])), model.activation)
        x = x + matmul(h, transpose(eff[WeightId(l, Role.FFN_DOWN)]))

    x = layer_norm(x)
    if model.tie_output:
        head = eff[WeightId(1, Role.EMBEDDING)]
    else:
        head = eff[WeightId(model.layers, Role.OUTPUT)]
    return matmul(x, transpose(head))


def forward(model: ModelSpec, batch, adapters=None, collect=None) -> Tensor:
    """Logits for a batch. When adapters are present every targeted matrix
    acts as W + alpha*A@B without mutating the stored weights. `collect`, if
    given, is filled with {wid: effective-weight tensor} for gradient
    inspection after backward."""
    inputs = batch.inputs if isinstance(batch, Batch) else batch
    eff = _resolve_weights(model, adapters, collect)
    if model.kind == "mlp":
        x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs), dtype=model.dtype)
        if x.data.shape[-1] != model.dims[0]:
            raise ShapeError(f"input dim {x.data.shape[-1]} does not match model dim {model.dims[0]}")
        return _mlp_forward(model, x, eff)
    ids = np.asarray(inputs)
    if ids.ndim != 2:
        raise ShapeError(f"transformer input must be (batch, seq) ids, got shape {ids.shape}")
    return _transformer_forward(model, ids, eff)


def _pool_last(logits: Tensor) -> Tensor:
    """Select the final sequence position via mask-multiply + sum, keeping
    the op set closed."""
    b, seq, _ = logits.data.shape
    m = np.zeros((seq, 1), dtype=logits.dtype)
    m[-1, 0] = 1.0
    picked = mul(logits, Tensor(m, dtype=logits.dtype))
    return tsum(picked, axis=1)


def task_loss(model: ModelSpec, logits: Tensor, targets) -> Tensor:
    """Output map: mean cross-entropy for softmax-ce (last position on
    sequences), mean squared error for identity-mse."""
    if model.output_map == "softmax-ce":
        if logits.data.ndim == 3:
            logits = _pool_last(logits)
        return cross_entropy_logits(logits, np.asarray(targets))
    tgt = np.asarray(targets, dtype=model.dtype)
    return mse(logits, tgt)


def batch_loss(model: ModelSpec, batch: Batch, adapters=None, lam=0.0, collect=None) -> Tensor:
    """Training objective: mean task loss plus lam * sum of squared adapter
    Frobenius norms over the active adapters only."""
    logits = forward(model, batch, adapters=adapters, collect=collect)
    loss = task_loss(model, logits, batch.targets)
    if lam and adapters is not None:
        penalty = None
        for pair in adapters.pairs.values():
            term = tsum(mul(pair.a, pair.a)) + tsum(mul(pair.b, pair.b))
            penalty = term if penalty is None else penalty + term
        if penalty is not None:
            loss = loss + penalty * lam
    return loss


def loss_eval(model: ModelSpec, dataset: Dataset, adapters=None, lam=0.0) -> float:
    """Full-dataset objective value as a plain float."""
    if lam < 0:
        raise ValueError(f"regularization coefficient must be >= 0, got {lam}")
    return batch_loss(model, dataset.full_batch(), adapters=adapters, lam=lam).item()


def accuracy(model: ModelSpec, dataset: Dataset, adapters=None) -> float:
    """Classification accuracy (softmax-ce models only)."""
    logits = forward(model, dataset.full_batch(), adapters=adapters)
    z = logits.data
    if z.ndim == 3:
        z = z[:, -1, :]
    pred = z.argmax(axis=-1)
    return float((pred == np.asarray(dataset.targets)).mean())
