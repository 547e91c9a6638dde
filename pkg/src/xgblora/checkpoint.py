"""Binary checkpoints: magic "XGBL", explicit version, little-endian float
blocks keyed by weight id, optional live adapter set, PRNG state and step
counter. Raw byte storage of the weight arrays makes save/load/resume
bit-exact, which the serialization-framework alternatives cannot promise.

Layout (all integers little-endian):
    magic   4s   "XGBL"
    version u16  (currently 1)
    dtype   u8   0 = f64, 1 = f32
    step    u64  global optimizer step
    booster u32  1-based index of the booster in progress (0 = none)
    rng     u64  generator state
    spec    u32 length + UTF-8 JSON (model structure)
    n_weights u32, then per weight:
        layer u16, role u8, ndim u8, dims u32 each, raw float bytes
    has_adapters u8; if 1:
        booster_index u32, n_pairs u32, then per pair:
            layer u16, role u8, rank u32, alpha f64,
            A block (ndim/dims/raw), B block, A-init block
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from xgblora.lora import AdapterSet, LoraPair
from xgblora.models import ModelSpec, Role, Tensor, WeightId, sort_key

MAGIC = b"XGBL"
VERSION = 1

_ROLE_CODES = {role: i for i, role in enumerate(Role)}
_CODE_ROLES = {i: role for role, i in _ROLE_CODES.items()}


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


@dataclass
class CheckpointState:
    model: ModelSpec
    step: int
    booster: int
    rng_state: int
    adapters: Optional[AdapterSet] = None


def _write(fh, fmt, *values):
    fh.write(struct.pack("<" + fmt, *values))


def _read(fh, fmt):
    size = struct.calcsize("<" + fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise TruncatedCheckpoint(f"expected {size} bytes, got {len(buf)}")
    return struct.unpack("<" + fmt, buf)


def _write_array(fh, arr: np.ndarray, dtype):
    _write(fh, "B", arr.ndim)
    for d in arr.shape:
        _write(fh, "I", d)
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(fh, dtype) -> np.ndarray:
    (ndim,) = _read(fh, "B")
    shape = tuple(_read(fh, "I")[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    nbytes = count * np.dtype(dtype).itemsize
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise TruncatedCheckpoint(f"weight block truncated: wanted {nbytes}, got {len(buf)}")
    return np.frombuffer(buf, dtype=dtype).reshape(shape).copy()


def _write_wid(fh, wid: WeightId):
    _write(fh, "HB", wid.layer, _ROLE_CODES[wid.role])


def _read_wid(fh) -> WeightId:
    layer, code = _read(fh, "HB")
    if code not in _CODE_ROLES:
        raise CheckpointError(f"unknown role code {code}")
    return WeightId(layer, _CODE_ROLES[code])


def save_checkpoint(path, model: ModelSpec, step: int = 0, booster: int = 0,
                    rng_state: int = 0, adapters: Optional[AdapterSet] = None):
    dtype = np.dtype(model.dtype)
    le_dtype = "<f4" if dtype == np.float32 else "<f8"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write(fh, "H", VERSION)
        _write(fh, "B", 1 if dtype == np.float32 else 0)
        _write(fh, "Q", step)
        _write(fh, "I", booster)
        _write(fh, "Q", rng_state)
        spec = json.dumps(model.structure(), sort_keys=True).encode("utf-8")
        _write(fh, "I", len(spec))
        fh.write(spec)
        wids = sorted(model.weights, key=sort_key)
        _write(fh, "I", len(wids))
        for wid in wids:
            _write_wid(fh, wid)
            _write_array(fh, model.weights[wid].data, le_dtype)
        if adapters is None:
            _write(fh, "B", 0)
        else:
            adapters.check_live()
            _write(fh, "B", 1)
            _write(fh, "I", adapters.booster_index)
            targets = adapters.targets()
            _write(fh, "I", len(targets))
            for wid in targets:
                pair = adapters.pairs[wid]
                _write_wid(fh, wid)
                _write(fh, "I", pair.r)
                _write(fh, "d", pair.alpha)
                _write_array(fh, pair.a.data, le_dtype)
                _write_array(fh, pair.b.data, le_dtype)
                _write_array(fh, pair.a_init, le_dtype)


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise TruncatedCheckpoint("file shorter than magic")
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        (version,) = _read(fh, "H")
        if version != VERSION:
            raise VersionMismatch(f"checkpoint version {version}, supported {VERSION}")
        (dtype_code,) = _read(fh, "B")
        np_dtype = np.float32 if dtype_code == 1 else np.float64
        le_dtype = "<f4" if dtype_code == 1 else "<f8"
        (step,) = _read(fh, "Q")
        (booster,) = _read(fh, "I")
        (rng_state,) = _read(fh, "Q")
        (spec_len,) = _read(fh, "I")
        spec_raw = fh.read(spec_len)
        if len(spec_raw) != spec_len:
            raise TruncatedCheckpoint("spec block truncated")
        structure = json.loads(spec_raw.decode("utf-8"))
        (n_weights,) = _read(fh, "I")
        weights = {}
        for _ in range(n_weights):
            wid = _read_wid(fh)
            arr = _read_array(fh, le_dtype).astype(np_dtype)
            weights[wid] = Tensor(arr, requires_grad=False, dtype=np_dtype)
        model = ModelSpec.from_structure(structure, weights)

        (has_adapters,) = _read(fh, "B")
        adapters = None
        if has_adapters:
            (booster_index,) = _read(fh, "I")
            (n_pairs,) = _read(fh, "I")
            pairs = {}
            for _ in range(n_pairs):
                wid = _read_wid(fh)
                (rank,) = _read(fh, "I")
                (alpha,) = _read(fh, "d")
                a = _read_array(fh, le_dtype).astype(np_dtype)
                b = _read_array(fh, le_dtype).astype(np_dtype)
                a_init = _read_array(fh, le_dtype).astype(np_dtype)
                pairs[wid] = LoraPair(
                    target=wid,
                    a=Tensor(a, requires_grad=True, dtype=np_dtype),
                    b=Tensor(b, requires_grad=True, dtype=np_dtype),
                    r=rank,
                    alpha=alpha,
                    _a_init=a_init,
                )
            adapters = AdapterSet(pairs=pairs, booster_index=booster_index)
        return CheckpointState(
            model=model, step=step, booster=booster, rng_state=rng_state, adapters=adapters
        )
