"""Dense order-k tensors, contractions, symmetrization and the spiked model.

The spiked model is

    T = Z + sum_l s_l * u_l1 (x) u_l2 (x) ... (x) u_lk,    s_l = sqrt(mean(dims)) * beta_l

with Z an i.i.d. standard normal tensor (optionally symmetrized) and every
u a uniformly random unit vector.

Random streams
--------------
All randomness goes through numpy's PCG64 bit generator seeded from a
``numpy.random.SeedSequence(master_seed, spawn_key=(domain, index))``. The
derivation is platform independent, and normals use numpy's ziggurat
sampler (``Generator.standard_normal``). Distinct ``domain`` values keep the
instance stream and the initialization streams from ever overlapping, and
adding trials never shifts the stream of an existing one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    DimensionMismatchError,
    NonFiniteError,
    UnsupportedOrderError,
)

# spawn_key domains for SeedSequence derivation
INSTANCE_STREAM = 0
TRIAL_STREAM = 1
AXIS_TRIAL_STREAM = 2


def make_rng(master_seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for stream ``(domain, index)`` of ``master_seed``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def random_unit_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draw on the sphere: a normalized standard normal vector."""
    while True:
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm > 0.0:
            return v / norm


class DenseTensor:
    """Immutable dense real tensor of order k >= 3 in row-major layout.

    Parameters
    ----------
    data : array_like
        Entries; converted to a C-contiguous float64 array.
    symmetric : bool
        Flag that the entries are invariant under every axis permutation.
        Setting it requires equal dimensions; the caller vouches for the
        entries (``is_symmetric`` checks them). Order-3 contraction kernels
        read only one triangle of a flagged tensor.
    copy : bool
        Copy ``data`` even when it is already a suitable array.
    """

    __slots__ = ("data", "symmetric")

    def __init__(self, data, symmetric: bool = False, copy: bool = True):
        arr = np.array(data, dtype=np.float64, order="C", copy=copy)
        if arr.ndim < 3:
            raise DimensionMismatchError(f"tensor order must be >= 3, got {arr.ndim}")
        if arr.size == 0:
            raise DimensionMismatchError("tensor dimensions must be positive")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor entries must be finite")
        if symmetric and len(set(arr.shape)) != 1:
            raise DimensionMismatchError(
                f"a symmetric tensor needs equal dimensions, got {arr.shape}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "symmetric", bool(symmetric))

    def __setattr__(self, name, value):
        raise AttributeError("DenseTensor is immutable")

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        flag = ", symmetric" if self.symmetric else ""
        return f"DenseTensor(dims={self.dims}{flag})"

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.symmetric == other.symmetric and np.array_equal(self.data, other.data)

    __hash__ = None

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def is_symmetric(self, atol: float = 0.0) -> bool:
        """Check permutation invariance of the entries (all k! permutations)."""
        if len(set(self.dims)) != 1:
            return False
        for perm in itertools.permutations(range(self.order)):
            if atol == 0.0:
                if not np.array_equal(self.data, self.data.transpose(perm)):
                    return False
            elif not np.allclose(self.data, self.data.transpose(perm), rtol=0.0, atol=atol):
                return False
        return True

    def entry_hash(self) -> str:
        """SHA-256 of the raw entries; used to verify paired comparisons."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.dims, dtype="<i8").tobytes())
        h.update(self.data.astype("<f8", copy=False).tobytes())
        return h.hexdigest()


def as_tensor(T) -> DenseTensor:
    if isinstance(T, DenseTensor):
        return T
    return DenseTensor(T)


def _as_vector(v, n: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise DimensionMismatchError(f"{what}: expected a vector of length {n}, got shape {arr.shape}")
    return arr


def _check_finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} is not finite")
    return x


def outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product v1 (x) v2 (x) ... as a dense array."""
    out = np.asarray(vectors[0], dtype=np.float64)
    for v in vectors[1:]:
        out = np.multiply.outer(out, np.asarray(v, dtype=np.float64))
    return out


def _slab_size(n: int, k: int, copies: int) -> int:
    return max(1, int(2**22 // (copies * n ** (k - 1))))


def outer_power(v: np.ndarray, k: int) -> np.ndarray:
    """v^(x)k with bitwise permutation-invariant entries.

    Each entry multiplies its k factors in sorted order, so entries whose
    indices are permutations of one another are exactly equal.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    out = np.empty((n,) * k)
    slab = _slab_size(n, k, k)
    for i0 in range(0, n, slab):
        parts = []
        for a in range(k):
            shape = [1] * k
            shape[a] = -1
            parts.append((v[i0 : i0 + slab] if a == 0 else v).reshape(shape))
        vals = np.stack(np.broadcast_arrays(*parts))
        vals.sort(axis=0)
        prod = vals[0].copy()
        for r in vals[1:]:
            prod *= r
        out[i0 : i0 + slab] = prod
    return out


def contract_all(T, vs: Sequence[np.ndarray]) -> float:
    """Full contraction T(v1, ..., vk) = <T, v1 (x) ... (x) vk>."""
    T = as_tensor(T)
    if len(vs) != T.order:
        raise DimensionMismatchError(f"need {T.order} vectors, got {len(vs)}")
    vecs = [_as_vector(v, n, f"vector {a}") for a, (v, n) in enumerate(zip(vs, T.dims))]
    # contract the last axis first so every step is a matrix-vector product
    acc = T.data
    with np.errstate(over="ignore", invalid="ignore"):
        for v in reversed(vecs):
            acc = acc @ v
    return float(_check_finite(acc, "contraction"))


def contract_leave_one(T, axis: int, vs: Sequence[np.ndarray]) -> np.ndarray:
    """Contract every axis except ``axis``; ``vs`` lists the other axes in order.

    For order 3 and ``axis=0`` this is the vector T(:, w, z).
    """
    T = as_tensor(T)
    k = T.order
    if not 0 <= axis < k:
        raise DimensionMismatchError(f"axis {axis} out of range for order {k}")
    if len(vs) != k - 1:
        raise DimensionMismatchError(f"need {k - 1} vectors, got {len(vs)}")
    other = [a for a in range(k) if a != axis]
    vecs = {a: _as_vector(v, T.dims[a], f"vector for axis {a}") for a, v in zip(other, vs)}
    acc = np.moveaxis(T.data, axis, 0)
    for a in reversed(other):
        acc = acc @ vecs[a]
    return _check_finite(np.array(acc, dtype=np.float64), "contraction")


def contract_leave_two(T, held: tuple[int, int], v: np.ndarray) -> np.ndarray:
    """Order-3 slice matrix: entry (i, j) = sum_c T[.., i, .., j, .., c, ..] v[c].

    ``held`` names the two free axes, in the row/column order of the result.
    """
    T = as_tensor(T)
    if T.order != 3:
        raise UnsupportedOrderError("contract_leave_two is only defined for order-3 tensors")
    a, b = held
    if a == b or not (0 <= a < 3 and 0 <= b < 3):
        raise DimensionMismatchError(f"invalid held axes {held}")
    (c,) = {0, 1, 2} - {a, b}
    v = _as_vector(v, T.dims[c], "slice vector")
    M = np.transpose(T.data, (a, b, c)) @ v
    return _check_finite(np.array(M, dtype=np.float64), "contraction")


def _symmetrize_array(data: np.ndarray, slab: int) -> np.ndarray:
    # Average of all k! transposes. Summands are sorted before adding so the
    # result is bitwise invariant under index permutation; slabs along axis 0
    # bound the temporary memory at k! * slab * n^(k-1) doubles.
    k = data.ndim
    n = data.shape[0]
    perms = list(itertools.permutations(range(k)))
    views = [data.transpose(p) for p in perms]
    out = np.empty_like(data)
    for i0 in range(0, n, slab):
        stack = np.stack([v[i0 : i0 + slab] for v in views])
        stack.sort(axis=0)
        acc = stack[0].copy()
        for s in stack[1:]:
            acc += s
        out[i0 : i0 + slab] = acc / len(perms)
    return out


def symmetrize(T) -> DenseTensor:
    """Average of T over all permutations of its axes (flagged symmetric).

    Averaging instead of summing keeps symmetric tensors fixed points; the
    power-iteration direction is the same under either convention.
    """
    T = as_tensor(T)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"symmetrize needs equal dimensions, got {T.dims}")
    if T.symmetric:
        return T
    slab = _slab_size(T.dims[0], T.order, math.factorial(T.order))
    return DenseTensor(_symmetrize_array(T.data, slab), symmetric=True, copy=False)


def power_contract(T: DenseTensor, X: np.ndarray, rows: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Rowwise T(:, x, ..., x) for a batch ``X`` of shape (B, n).

    Only the rows listed in ``rows`` (default: all) are computed into ``out``.
    Each row is accumulated in a fixed order independent of the other rows,
    so a trial gives bitwise identical results alone or inside any batch.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError("X must be a 2-d array with one vector per row")
    dims = T.dims
    if any(d != X.shape[1] for d in dims[1:]):
        raise DimensionMismatchError(f"vector length {X.shape[1]} does not match dims {dims}")
    if rows is None:
        rows = np.arange(X.shape[0], dtype=np.int64)
    if out is None:
        out = np.zeros((X.shape[0], dims[0]))
    if T.order == 3 and T.symmetric:
        _kernels.symmetric_order3(T.data, X, rows, out)
    elif T.order == 3:
        _kernels.bilinear_order3(T.data, X, X, rows, out)
    elif T.order == 4:
        _kernels.leave_one_order4(T.data, X, rows, out)
    else:
        for r in rows:
            out[r] = contract_leave_one(T, 0, [X[r]] * (T.order - 1))
    return out


def bilinear_contract(T: DenseTensor, Y: np.ndarray, W: np.ndarray, rows: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Rowwise T(:, y, w) for an order-3 tensor of any shape (n0, n1, n2)."""
    if T.order != 3:
        raise UnsupportedOrderError("bilinear_contract is defined for order 3 only")
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    n0, n1, n2 = T.dims
    if Y.ndim != 2 or W.ndim != 2 or Y.shape != (W.shape[0], n1) or W.shape[1] != n2:
        raise DimensionMismatchError(f"batches {Y.shape} and {W.shape} do not match dims {T.dims}")
    if rows is None:
        rows = np.arange(Y.shape[0], dtype=np.int64)
    if out is None:
        out = np.zeros((Y.shape[0], n0))
    return _kernels.bilinear_order3(T.data, Y, W, rows, out)


def row_dots(X: np.ndarray, Y: np.ndarray, rows: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Rowwise inner products with a batch-independent summation order."""
    if rows is None:
        rows = np.arange(X.shape[0], dtype=np.int64)
    if out is None:
        out = np.zeros(X.shape[0])
    return _kernels.row_dots(X, Y, rows, out)


def objective_values(T: DenseTensor, X: np.ndarray) -> np.ndarray:
    """Rowwise T(x, ..., x) for the rows of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return row_dots(power_contract(T, X), X)


@dataclass(frozen=True)
class Spike:
    """One planted rank-one component: per-axis unit factors and its SNR."""

    factors: tuple[np.ndarray, ...]
    beta: float
    scale: float

    @property
    def is_symmetric(self) -> bool:
        first = self.factors[0]
        return all(f is first or np.array_equal(f, first) for f in self.factors[1:])

    def tensor(self) -> np.ndarray:
        if self.is_symmetric:
            return self.scale * outer_power(self.factors[0], len(self.factors))
        return self.scale * outer(self.factors)


@dataclass(frozen=True)
class SpikedInstance:
    """Observation T = Z + sum of planted spikes, with the ground truth kept."""

    tensor: DenseTensor
    noise: DenseTensor
    spikes: tuple[Spike, ...]
    seed: int
    symmetric_noise: bool = False
    index: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def signal_scale(self) -> float:
        return self.spikes[0].scale

    @property
    def v0(self) -> np.ndarray:
        """Planted vector of the first spike (first-axis factor)."""
        return self.spikes[0].factors[0]

    @property
    def beta(self) -> float:
        return self.spikes[0].beta


def signal_scale(dims: Sequence[int], beta: float) -> float:
    """Raw rank-one coefficient sqrt(mean(dims)) * beta."""
    return math.sqrt(sum(dims) / len(dims)) * float(beta)


def generate_spiked(
    dims,
    k: int = 3,
    beta: float | Sequence[float] = 1.0,
    seed: int = 0,
    symmetric_noise: bool = True,
    num_spikes: int = 1,
    index: int = 0,
    distinct_factors: bool | None = None,
) -> SpikedInstance:
    """Draw one spiked-tensor instance.

    Parameters
    ----------
    dims : int or sequence of int
        Axis dimensions; an int means ``(dims,) * k``.
    k : int
        Tensor order (ignored when ``dims`` is a sequence).
    beta : float or sequence
        SNR of every spike, or one value per spike.
    seed, index : int
        Master seed and instance index; the draw uses stream
        ``(INSTANCE_STREAM, index)``.
    symmetric_noise : bool
        Symmetrize Z before adding the spikes (requires equal dims).
    num_spikes : int
        Number of planted components; more than one requires equal dims.
    distinct_factors : bool, optional
        Use independent factors per axis. Defaults to True exactly when the
        dimensions differ; with equal dims the spike is v^(x)k.

    Notes
    -----
    Draw order: the n1*...*nk noise entries first, then spike by spike,
    axis by axis, each factor a normalized standard normal vector.
    """
    if isinstance(dims, (int, np.integer)):
        dims = (int(dims),) * k
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise DimensionMismatchError("tensor order must be >= 3")
    if any(d <= 0 for d in dims):
        raise DimensionMismatchError(f"dimensions must be positive, got {dims}")
    if num_spikes < 1:
        raise ValueError("num_spikes must be >= 1")
    equal = len(set(dims)) == 1
    if num_spikes > 1 and not equal:
        raise DimensionMismatchError("multiple spikes require equal dimensions")
    if symmetric_noise and not equal:
        raise DimensionMismatchError("symmetric noise requires equal dimensions")
    betas = np.broadcast_to(np.asarray(beta, dtype=np.float64), (num_spikes,))
    if np.any(betas < 0) or not np.all(np.isfinite(betas)):
        raise ValueError("beta must be finite and non-negative")
    if distinct_factors is None:
        distinct_factors = not equal

    rng = make_rng(seed, INSTANCE_STREAM, index)
    Z = rng.standard_normal(dims)
    noise = DenseTensor(Z, copy=False)
    if symmetric_noise:
        noise = symmetrize(noise)

    spikes = []
    data = noise.data.copy()
    for b in betas:
        if distinct_factors:
            factors = tuple(random_unit_vector(rng, d) for d in dims)
        else:
            u = random_unit_vector(rng, dims[0])
            factors = (u,) * len(dims)
        spike = Spike(factors=factors, beta=float(b), scale=signal_scale(dims, b))
        data += spike.tensor()
        spikes.append(spike)

    sym = symmetric_noise and not distinct_factors
    tensor = DenseTensor(data, symmetric=sym, copy=False)
    return SpikedInstance(
        tensor=tensor,
        noise=noise,
        spikes=tuple(spikes),
        seed=int(seed),
        symmetric_noise=bool(symmetric_noise),
        index=int(index),
    )
