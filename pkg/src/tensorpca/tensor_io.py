"""Binary tensor files and CSV helpers.

Tensor file layout (all integers unsigned 64-bit little endian, all reals
IEEE double little endian, entries row-major):

    magic     8 bytes  b"TPCATNSR"
    version   1 byte   currently 1
    flags     1 byte   1 symmetric tensor, 2 ground truth, 4 noise, 8 symmetric noise
    k         u64
    dims      k x u64
    entries   prod(dims) x f64
    [truth]   seed u64, index u64, p u64, then per spike:
              beta f64, scale f64, k factors of dims[a] x f64
    [noise]   prod(dims) x f64
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import TensorPCAError
from .tensor_core import DenseTensor, Spike, SpikedInstance, outer, outer_power

MAGIC = b"TPCATNSR"
VERSION = 1
FLAG_SYMMETRIC = 1
FLAG_TRUTH = 2
FLAG_NOISE = 4
FLAG_SYMMETRIC_NOISE = 8


class TensorFileError(TensorPCAError, ValueError):
    """Malformed or unreadable tensor file; the message names the path."""


def _f8(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_tensor_file(path, tensor, instance: SpikedInstance | None = None, include_noise: bool = True) -> Path:
    """Write ``tensor`` (or ``instance.tensor`` with its ground truth) to ``path``."""
    path = Path(path)
    if instance is not None:
        tensor = instance.tensor
    if not isinstance(tensor, DenseTensor):
        tensor = DenseTensor(tensor)
    flags = FLAG_SYMMETRIC if tensor.symmetric else 0
    body = [_f8(tensor.data)]
    if instance is not None:
        flags |= FLAG_TRUTH
        if instance.symmetric_noise:
            flags |= FLAG_SYMMETRIC_NOISE
        truth = [struct.pack("<QQQ", int(instance.seed) & (2**64 - 1), int(instance.index), len(instance.spikes))]
        for sp in instance.spikes:
            truth.append(struct.pack("<dd", float(sp.beta), float(sp.scale)))
            truth.extend(_f8(f) for f in sp.factors)
        body.extend(truth)
        if include_noise:
            flags |= FLAG_NOISE
            body.append(_f8(instance.noise.data))
    header = MAGIC + struct.pack("<BB", VERSION, flags) + struct.pack(f"<Q{tensor.order}Q", tensor.order, *tensor.dims)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for chunk in body:
                fh.write(chunk)
    except OSError as exc:
        raise TensorFileError(f"{path}: cannot write tensor file ({exc.strerror or exc})") from exc
    return path


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, nbytes):
        if self.pos + nbytes > len(self.buf):
            raise TensorFileError(f"{self.path}: truncated file")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def u64(self, count=1):
        return struct.unpack(f"<{count}Q", self.take(8 * count))

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def read_tensor_file(path) -> tuple[DenseTensor, SpikedInstance | None]:
    """Read a tensor file; the instance is returned when ground truth is stored.

    Without a stored noise section the noise is recomputed as T minus the
    planted terms.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise TensorFileError(f"{path}: cannot read tensor file ({exc.strerror or exc})") from exc
    rd = _Reader(buf, path)
    if rd.take(len(MAGIC)) != MAGIC:
        raise TensorFileError(f"{path}: not a tensor file (bad magic)")
    version, flags = struct.unpack("<BB", rd.take(2))
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    (k,) = rd.u64()
    if not 3 <= k <= 16:
        raise TensorFileError(f"{path}: implausible order {k}")
    dims = rd.u64(k)
    size = math.prod(dims)
    data = rd.f64(size).reshape(dims)
    try:
        tensor = DenseTensor(data, symmetric=bool(flags & FLAG_SYMMETRIC), copy=False)
    except TensorPCAError as exc:
        raise TensorFileError(f"{path}: {exc}") from exc
    instance = None
    if flags & FLAG_TRUTH:
        seed, index, p = rd.u64(3)
        spikes = []
        for _ in range(p):
            beta, scale = struct.unpack("<dd", rd.take(16))
            factors = tuple(rd.f64(d) for d in dims)
            if len(set(dims)) == 1 and all(np.array_equal(f, factors[0]) for f in factors):
                factors = (factors[0],) * k
            spikes.append(Spike(factors=factors, beta=beta, scale=scale))
        if flags & FLAG_NOISE:
            noise = DenseTensor(rd.f64(size).reshape(dims), symmetric=bool(flags & FLAG_SYMMETRIC_NOISE), copy=False)
        else:
            planted = sum(
                sp.scale * (outer_power(sp.factors[0], k) if sp.is_symmetric else outer(sp.factors)) for sp in spikes
            )
            noise = DenseTensor(tensor.data - planted, symmetric=bool(flags & FLAG_SYMMETRIC_NOISE))
        instance = SpikedInstance(
            tensor=tensor,
            noise=noise,
            spikes=tuple(spikes),
            seed=int(seed),
            symmetric_noise=bool(flags & FLAG_SYMMETRIC_NOISE),
            index=int(index),
        )
    if rd.pos != len(buf):
        raise TensorFileError(f"{path}: {len(buf) - rd.pos} trailing bytes")
    return tensor, instance
