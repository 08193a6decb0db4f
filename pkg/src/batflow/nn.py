"""Parameter containers, layers and the BATW checkpoint format."""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

CHECKPOINT_MAGIC = b"BATW"


class CheckpointError(ValueError):
    pass


class Module:
    """Minimal parameter tree; attributes that are Parameters, Modules or
    lists of Modules are discovered in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in params.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise CheckpointError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel, stride: int = 1, padding=None,
                 bias: bool = True, rng: np.random.Generator | None = None,
                 dtype=np.float32, gain: float = 2.0 ** 0.5):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if padding is None:
            padding = (kh // 2, kw // 2)
        rng = rng if rng is not None else np.random.default_rng(0)
        std = gain / np.sqrt(cin * kh * kw)
        self.weight = Parameter(rng.normal(0.0, std, size=(cout, cin, kh, kw)).astype(dtype))
        self.bias = Parameter(np.zeros(cout, dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self):
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

def encode_checkpoint(named: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 4 * size > len(data):
                raise CheckpointError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(data, "<f4", size, off).reshape(dims).astype(np.float32)
            off += 4 * size
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from None
    if off != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return out


def save_checkpoint(module: Module, path: str | Path):
    Path(path).write_bytes(encode_checkpoint(module.state_dict()))


def load_checkpoint(module: Module, path: str | Path):
    module.load_state_dict(decode_checkpoint(Path(path).read_bytes()))
