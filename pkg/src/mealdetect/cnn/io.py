"""Binary model files.

Layout (little-endian)::

    b"GDCNN1"
    u32 x 8   input_size conv1_filters conv2_filters kernel pool pool_stride hidden n_classes
    u64       init_seed
    u32       number of arrays
    per array: u32 ndim, u32 x ndim dims, float64 data in row-major order
"""
from __future__ import annotations

import io
import struct

import numpy as np

from ..exceptions import ModelFormatError
from .model import PARAM_NAMES, Architecture, CnnModel

MAGIC = b"GDCNN1"
_ARCH_FIELDS = ("input_size", "conv1_filters", "conv2_filters", "kernel", "pool", "pool_stride",
                "hidden", "n_classes")


def model_to_bytes(model: CnnModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<8I", *(getattr(model.arch, f) for f in _ARCH_FIELDS)))
    buf.write(struct.pack("<Q", int(model.init_seed) & 0xFFFFFFFFFFFFFFFF))
    buf.write(struct.pack("<I", len(PARAM_NAMES)))
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    chunk = buf.read(size)
    if len(chunk) != size:
        raise ModelFormatError("model file is truncated")
    return struct.unpack(fmt, chunk)


def model_from_bytes(data: bytes, expected_input: int | None = None) -> CnnModel:
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    arch = Architecture(**dict(zip(_ARCH_FIELDS, _read(buf, "<8I"))))
    if expected_input is not None and arch.input_size != expected_input:
        raise ModelFormatError(f"model expects {arch.input_size}px input, wanted {expected_input}")
    try:
        arch.check()
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    (seed,) = _read(buf, "<Q")
    (count,) = _read(buf, "<I")
    if count != len(PARAM_NAMES):
        raise ModelFormatError(f"expected {len(PARAM_NAMES)} arrays, found {count}")
    shapes = arch.param_shapes()
    params = {}
    for name in PARAM_NAMES:
        (ndim,) = _read(buf, "<I")
        shape = _read(buf, f"<{ndim}I")
        if tuple(shape) != shapes[name]:
            raise ModelFormatError(f"{name}: stored shape {tuple(shape)} != expected {shapes[name]}")
        nbytes = 8 * int(np.prod(shape))
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise ModelFormatError("model file is truncated")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if buf.read(1):
        raise ModelFormatError("trailing bytes after last array")
    return CnnModel(arch=arch, params=params, init_seed=seed)


def save_model(model: CnnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path, expected_input: int | None = None) -> CnnModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), expected_input)
