"""Truncated Fock-space states and operators.

Every object here is immutable: the backing numpy arrays are flagged
read-only on construction. Multi-mode spaces follow the mode order
(storage, readout 1, readout 2) with the first mode as the slowest index
of the Kronecker product.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    InvalidIndexError,
    InvalidStateError,
    TruncationWarning,
    ZeroVectorError,
)

TAIL_TOLERANCE = 1e-8
DEFAULT_STORAGE_DIM = 25
DEFAULT_READOUT_DIM = 3


def _frozen(array):
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ModeLayout:
    """Ordered per-mode truncation dimensions of a composite space."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DimensionError("layout needs at least one mode")
        for d in dims:
            if d < 2:
                raise DimensionError(f"mode dimension must be >= 2, got {d}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def single(cls, dim: int) -> "ModeLayout":
        return cls((dim,))

    @property
    def total(self) -> int:
        return math.prod(self.dims)

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)


class Operator:
    """Complex square matrix on the space described by ``layout``."""

    __slots__ = ("layout", "matrix")
    __array_priority__ = 100

    def __init__(self, matrix, layout: ModeLayout | None = None):
        matrix = _frozen(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"operator matrix must be square, got {matrix.shape}")
        if layout is None:
            layout = ModeLayout.single(matrix.shape[0])
        if layout.total != matrix.shape[0]:
            raise DimensionError(
                f"matrix of size {matrix.shape[0]} does not match layout {layout.dims}"
            )
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "layout", layout)

    def __setattr__(self, name, value):
        raise AttributeError("Operator is immutable")

    def __repr__(self):
        return f"Operator(layout={self.layout.dims})"

    @property
    def dim(self) -> int:
        return self.layout.total

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.layout)

    def _check(self, other: "Operator"):
        if other.layout != self.layout:
            raise DimensionError(
                f"layout mismatch: {self.layout.dims} vs {other.layout.dims}"
            )

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.matrix @ other.matrix, self.layout)
        if isinstance(other, StateVector):
            return self.apply(other)
        return NotImplemented

    def __add__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        self._check(other)
        return Operator(self.matrix + other.matrix, self.layout)

    def __sub__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        self._check(other)
        return Operator(self.matrix - other.matrix, self.layout)

    def __neg__(self):
        return Operator(-self.matrix, self.layout)

    def __mul__(self, scalar):
        if isinstance(scalar, (Operator, StateVector)):
            return NotImplemented
        return Operator(complex(scalar) * self.matrix, self.layout)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.matrix / complex(scalar), self.layout)

    def apply(self, state: "StateVector") -> np.ndarray:
        """Unnormalized image of ``state`` (may be the zero vector)."""
        if state.layout != self.layout:
            raise DimensionError(
                f"layout mismatch: {self.layout.dims} vs {state.layout.dims}"
            )
        return self.matrix @ state.amplitudes

    def expect(self, state) -> complex:
        if isinstance(state, StateVector):
            psi = state.amplitudes
            return complex(np.vdot(psi, self.matrix @ psi))
        return complex(np.trace(self.matrix @ state.matrix))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)


class StateVector:
    """Unit-norm ket on a truncated space."""

    __slots__ = ("layout", "amplitudes", "truncation_loss")

    def __init__(self, amplitudes, layout: ModeLayout | None = None, truncation_loss=0.0):
        amplitudes = np.array(amplitudes, dtype=complex).ravel()
        if layout is None:
            layout = ModeLayout.single(amplitudes.size)
        if layout.total != amplitudes.size:
            raise DimensionError(
                f"vector of size {amplitudes.size} does not match layout {layout.dims}"
            )
        norm = np.linalg.norm(amplitudes)
        if norm == 0.0:
            raise ZeroVectorError("cannot normalize the zero vector")
        object.__setattr__(self, "amplitudes", _frozen(amplitudes / norm))
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "truncation_loss", float(truncation_loss))

    def __setattr__(self, name, value):
        raise AttributeError("StateVector is immutable")

    def __repr__(self):
        return f"StateVector(layout={self.layout.dims})"

    @property
    def dim(self) -> int:
        return self.layout.total

    def inner(self, other: "StateVector") -> complex:
        """<self|other>."""
        if other.layout != self.layout:
            raise DimensionError("layout mismatch in inner product")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def projector(self) -> "DensityMatrix":
        psi = self.amplitudes
        return DensityMatrix(np.outer(psi, psi.conj()), self.layout)

    def tensor(self, other: "StateVector") -> "StateVector":
        layout = ModeLayout(self.layout.dims + other.layout.dims)
        return StateVector(np.kron(self.amplitudes, other.amplitudes), layout)


class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite state.

    The invariants are checked on construction unless ``check=False``.
    """

    __slots__ = ("layout", "matrix")

    HERMITIAN_TOL = 1e-10
    TRACE_TOL = 1e-8
    EIGEN_TOL = 1e-8

    def __init__(self, matrix, layout: ModeLayout | None = None, check: bool = True):
        matrix = np.array(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"density matrix must be square, got {matrix.shape}")
        if layout is None:
            layout = ModeLayout.single(matrix.shape[0])
        if layout.total != matrix.shape[0]:
            raise DimensionError(
                f"matrix of size {matrix.shape[0]} does not match layout {layout.dims}"
            )
        object.__setattr__(self, "matrix", _frozen(matrix))
        object.__setattr__(self, "layout", layout)
        if check:
            herm, trace_err, min_eig = self.diagnostics()
            if herm > self.HERMITIAN_TOL:
                raise InvalidStateError(f"not Hermitian: max |rho - rho^dag| = {herm:.3e}")
            if trace_err > self.TRACE_TOL:
                raise InvalidStateError(f"trace differs from 1 by {trace_err:.3e}")
            if min_eig < -self.EIGEN_TOL:
                raise InvalidStateError(f"negative eigenvalue {min_eig:.3e}")

    def __setattr__(self, name, value):
        raise AttributeError("DensityMatrix is immutable")

    def __repr__(self):
        return f"DensityMatrix(layout={self.layout.dims})"

    @classmethod
    def from_state(cls, state: StateVector) -> "DensityMatrix":
        return state.projector()

    @property
    def dim(self) -> int:
        return self.layout.total

    def diagnostics(self) -> tuple[float, float, float]:
        """(max Hermiticity defect, |trace - 1|, smallest eigenvalue)."""
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T), initial=0.0))
        trace_err = abs(complex(np.trace(m)) - 1.0)
        min_eig = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        return herm, trace_err, min_eig

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


def destroy(dim: int) -> Operator:
    """Annihilation operator truncated to ``dim`` Fock levels."""
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    return Operator(np.diag(np.sqrt(np.arange(1, dim)), k=1))


def create(dim: int) -> Operator:
    return destroy(dim).dag()


def number(dim: int) -> Operator:
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    return Operator(np.diag(np.arange(dim, dtype=float)))


def identity(layout) -> Operator:
    if isinstance(layout, int):
        layout = ModeLayout.single(layout)
    return Operator(np.eye(layout.total), layout)


def parity(dim: int) -> Operator:
    """Photon-number parity (-1)^n."""
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    return Operator(np.diag((-1.0) ** np.arange(dim)))


def fock_state(n: int, dim: int) -> StateVector:
    _check_index(n, dim)
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(amps)


def jump(m: int, n: int, dim: int) -> Operator:
    """|m><n| on a single mode."""
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    _check_index(m, dim)
    _check_index(n, dim)
    mat = np.zeros((dim, dim), dtype=complex)
    mat[m, n] = 1.0
    return Operator(mat)


def fock_projector(n: int, dim: int) -> Operator:
    return jump(n, n, dim)


def _check_index(n, dim):
    if not 0 <= n < dim:
        raise InvalidIndexError(f"Fock index {n} outside truncation 0..{dim - 1}")


def _poisson_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    # alpha^n / sqrt(n!) by recursion; stays finite for any dim used here
    amps = np.empty(dim, dtype=complex)
    amps[0] = 1.0
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps


def poisson_tail(mean: float, dim: int) -> float:
    """Poisson weight on n >= dim."""
    from scipy.stats import poisson

    return float(poisson.sf(dim - 1, mean))


def min_dim_for_tail(alpha: complex, tol: float = TAIL_TOLERANCE) -> int:
    """Smallest truncation whose Poisson tail for |alpha|^2 is below ``tol``."""
    mean = abs(alpha) ** 2
    dim = 2
    while poisson_tail(mean, dim) >= tol:
        dim += 1
    return dim


def _warn_tail(alpha, dim, what):
    tail = poisson_tail(abs(alpha) ** 2, dim)
    if tail >= TAIL_TOLERANCE:
        warnings.warn(
            f"{what}(alpha={alpha}) truncated at dim={dim} drops Poisson weight {tail:.2e}",
            TruncationWarning,
            stacklevel=3,
        )
    return tail


def coherent_state(alpha: complex, dim: int) -> StateVector:
    """Truncated coherent state, renormalized after truncation."""
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    alpha = complex(alpha)
    amps = _poisson_amplitudes(alpha, dim) * math.exp(-abs(alpha) ** 2 / 2)
    loss = 1.0 - float(np.sum(np.abs(amps) ** 2))
    _warn_tail(alpha, dim, "coherent_state")
    return StateVector(amps, truncation_loss=max(loss, 0.0))


def cat_state(alpha: complex, parity_sign: str | int, dim: int) -> StateVector:
    """Even (``'+'``) or odd (``'-'``) Schrodinger cat |alpha> +/- |-alpha>.

    Amplitudes are c_m = e^{-|a|^2/2} a^m / sqrt(m!) / sqrt(2(1 +/- e^{-2|a|^2}))
    on the matching parity sector, then renormalized on the truncated space.
    """
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    sign = _parity_sign(parity_sign)
    alpha = complex(alpha)
    if sign < 0 and alpha == 0:
        raise ZeroVectorError("odd cat state is undefined at alpha = 0")
    r2 = abs(alpha) ** 2
    amps = _poisson_amplitudes(alpha, dim) * math.exp(-r2 / 2)
    amps /= math.sqrt(2.0 * (1.0 + sign * math.exp(-2.0 * r2)))
    start = 0 if sign > 0 else 1
    mask = np.zeros(dim, dtype=bool)
    mask[start::2] = True
    amps[~mask] = 0.0
    loss = 1.0 - float(np.sum(np.abs(amps) ** 2))
    _warn_tail(alpha, dim, "cat_state")
    return StateVector(amps, truncation_loss=max(loss, 0.0))


def _parity_sign(parity_sign) -> int:
    if parity_sign in ("+", 1, "even", "+1"):
        return 1
    if parity_sign in ("-", -1, "odd", "-1"):
        return -1
    raise ValueError(f"parity sign must be '+' or '-', got {parity_sign!r}")


def tensor(*ops: Operator) -> Operator:
    """Kronecker product, layouts concatenated in argument order."""
    if not ops:
        raise DimensionError("tensor of nothing")
    dims = tuple(d for op in ops for d in op.layout.dims)
    matrix = reduce(np.kron, (op.matrix for op in ops))
    return Operator(matrix, ModeLayout(dims))


def embed(op: Operator, mode_index: int, layout: ModeLayout) -> Operator:
    """Lift a single-mode operator onto ``layout`` with identity elsewhere."""
    if not 0 <= mode_index < layout.n_modes:
        raise DimensionError(f"mode index {mode_index} outside layout {layout.dims}")
    if op.dim != layout.dims[mode_index]:
        raise DimensionError(
            f"operator dim {op.dim} does not match mode {mode_index} of {layout.dims}"
        )
    before = math.prod(layout.dims[:mode_index])
    after = math.prod(layout.dims[mode_index + 1:])
    matrix = np.kron(np.kron(np.eye(before), op.matrix), np.eye(after))
    return Operator(matrix, layout)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on the ``keep`` modes, in their original order."""
    keep = sorted(set(int(k) for k in keep))
    dims = rho.layout.dims
    if not keep:
        raise ValueError("partial_trace needs at least one mode to keep")
    if keep[0] < 0 or keep[-1] >= len(dims):
        raise DimensionError(f"mode indices {keep} outside layout {dims}")
    n = len(dims)
    tensor_rho = np.asarray(rho.matrix).reshape(dims + dims)
    # einsum subscripts: bra and ket labels shared on traced modes
    letters = "abcdefghijklmnopqrstuvwxyz"
    ket = [letters[i] for i in range(n)]
    bra = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = [ket[i] for i in keep] + [bra[i] for i in keep]
    reduced = np.einsum(f"{''.join(ket)}{''.join(bra)}->{''.join(out)}", tensor_rho)
    kept_dims = tuple(dims[i] for i in keep)
    size = math.prod(kept_dims)
    return DensityMatrix(reduced.reshape(size, size), ModeLayout(kept_dims), check=False)
