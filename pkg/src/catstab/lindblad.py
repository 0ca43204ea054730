"""Lindblad dynamics: dissipators, Liouvillian assembly, propagation, steady states.

Density matrices are vectorized row-major (numpy's default ravel), so that
vec(A rho B) = (A kron B^T) vec(rho).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import DOP853
from scipy.sparse.csgraph import connected_components

from .errors import (
    CapacityError,
    DegenerateSteadyStateError,
    DimensionError,
    IntegrationError,
)
from .fock import DensityMatrix, ModeLayout, Operator
from .krylov import KrylovPropagator, ShiftInvertPropagator

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 400
NULL_SPACE_MAX_DIM = 400


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, (Operator, DensityMatrix)):
        return np.asarray(x.matrix)
    return np.asarray(x, dtype=complex)


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus weighted collapse operators on one layout.

    Rates and the Hamiltonian share angular-frequency units (hbar = 1).
    """

    hamiltonian: Operator
    collapse_terms: tuple[tuple[float, Operator], ...] = ()
    name: str = ""

    def __post_init__(self):
        terms = tuple((float(rate), op) for rate, op in self.collapse_terms)
        for rate, op in terms:
            if rate < 0:
                raise ValueError(f"collapse rate must be non-negative, got {rate}")
            if op.layout != self.hamiltonian.layout:
                raise DimensionError(
                    f"collapse operator layout {op.layout.dims} differs from "
                    f"Hamiltonian layout {self.hamiltonian.layout.dims}"
                )
        object.__setattr__(self, "collapse_terms", terms)

    @property
    def layout(self) -> ModeLayout:
        return self.hamiltonian.layout

    @property
    def dim(self) -> int:
        return self.layout.total

    @property
    def max_rate(self) -> float:
        rates = [rate for rate, _ in self.collapse_terms]
        return max(rates, default=0.0)


def dissipator_apply(op, rho) -> np.ndarray:
    """O rho O^dag - (O^dag O rho + rho O^dag O) / 2."""
    o = _as_matrix(op)
    r = _as_matrix(rho)
    if o.shape != r.shape:
        raise DimensionError(f"shape mismatch: operator {o.shape}, state {r.shape}")
    od = o.conj().T
    odo = od @ o
    return o @ r @ od - 0.5 * (odo @ r + r @ odo)


def liouvillian_apply(model: LindbladModel, rho) -> np.ndarray:
    """Right-hand side -i[H, rho] + sum_k rate_k D(O_k) rho."""
    if isinstance(rho, DensityMatrix) and rho.layout != model.layout:
        raise DimensionError(f"layout mismatch: {rho.layout.dims} vs {model.layout.dims}")
    r = _as_matrix(rho)
    if r.shape != (model.dim, model.dim):
        raise DimensionError(f"state shape {r.shape} does not match model dim {model.dim}")
    h = np.asarray(model.hamiltonian.matrix)
    out = -1j * (h @ r - r @ h)
    for rate, op in model.collapse_terms:
        if rate:
            out += rate * dissipator_apply(op, r)
    return out


def superoperator_bytes(dim: int, dense: bool = True) -> int:
    return 16 * dim**4 if dense else 16 * dim**2


def assemble_liouvillian_matrix(
    model: LindbladModel, cap: int = DEFAULT_CAPACITY, dense: bool = False
):
    """Matrix L with vec(d rho/dt) = L vec(rho).

    Returns a CSR matrix, or an ndarray when ``dense`` is true. Raises
    CapacityError when the Hilbert-space dimension exceeds ``cap``.
    """
    d = model.dim
    if d > cap:
        need = superoperator_bytes(d, dense=True)
        raise CapacityError(
            f"Liouvillian for dim {d} exceeds cap {cap}: a dense superoperator "
            f"needs {need / 2**30:.2f} GiB ({d * d} x {d * d} complex entries)"
        )
    eye = sp.identity(d, dtype=complex, format="csr")
    h = sp.csr_matrix(np.asarray(model.hamiltonian.matrix))
    lv = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for rate, op in model.collapse_terms:
        if not rate:
            continue
        o = sp.csr_matrix(np.asarray(op.matrix))
        odo = (o.conj().T @ o).tocsr()
        lv = lv + rate * (
            sp.kron(o, o.conj()) - 0.5 * sp.kron(odo, eye) - 0.5 * sp.kron(eye, odo.T)
        )
    lv = lv.tocsr()
    lv.eliminate_zeros()
    if dense:
        return lv.toarray()
    return lv


@dataclass(frozen=True)
class PropagatorPlan:
    """How ``evolve`` advances the state.

    ``method`` is one of ``auto``, ``explicit-adaptive``, ``krylov-exponential``
    or ``dense-exponential``. ``max_step`` is in units of 1/(largest rate).
    ``shift_invert`` selects the rational Krylov variant for stiff generators;
    ``None`` decides from the generator norm.
    """

    method: str = "auto"
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float | None = None
    krylov_dim: int = 30
    shift_invert: bool | None = None
    capacity: int = DEFAULT_CAPACITY

    METHODS = ("auto", "explicit-adaptive", "krylov-exponential", "dense-exponential")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise ValueError(f"unknown propagation method {self.method!r}")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if not self.atol > 0:
            raise ValueError("atol must be positive")


class TimeSeries:
    """Sampled observables on an increasing time grid."""

    def __init__(self, times=(), records: Mapping[str, Sequence[float]] | None = None,
                 states: list | None = None):
        self.times = np.asarray(times, dtype=float)
        self.records = {k: np.asarray(v, dtype=float) for k, v in (records or {}).items()}
        self.states = states
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for key, values in self.records.items():
            if values.shape != self.times.shape:
                raise ValueError(f"record {key!r} has {values.size} samples, expected {self.times.size}")

    def __len__(self):
        return self.times.size

    def __getitem__(self, key):
        return self.records[key]

    @property
    def names(self) -> list[str]:
        return list(self.records)

    def final(self, key: str) -> float:
        return float(self.records[key][-1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["time", *self.names])
        for i, t in enumerate(self.times):
            writer.writerow([repr(float(t))] + [repr(float(self.records[k][i])) for k in self.names])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "observables": {k: [float(v) for v in vals] for k, vals in self.records.items()},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: Mapping) -> "TimeSeries":
        return cls(data["times"], data["observables"])

    @classmethod
    def from_json(cls, text: str) -> "TimeSeries":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        cols = list(zip(*body)) if body else [[] for _ in header]
        return cls([float(x) for x in cols[0]],
                   {name: [float(x) for x in col] for name, col in zip(header[1:], cols[1:])})


def _hermitize(vec: np.ndarray, d: int) -> np.ndarray:
    m = vec.reshape(d, d)
    return (0.5 * (m + m.conj().T)).ravel()


def state_diagnostics(rho: np.ndarray) -> dict[str, float]:
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    trace_err = abs(complex(np.trace(rho)) - 1.0)
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    return {"trace_error": trace_err, "hermiticity_error": herm, "min_eigenvalue": min_eig}


def _choose_method(plan: PropagatorPlan, d: int) -> str:
    if plan.method != "auto":
        return plan.method
    # D^2 x D^2 dense exponential stays cheap up to D ~ 40
    return "dense-exponential" if d <= 40 else "krylov-exponential"


def evolve(
    model: LindbladModel,
    rho0: DensityMatrix,
    t_grid: Sequence[float],
    plan: PropagatorPlan | None = None,
    observers: Mapping[str, Callable[[DensityMatrix], float]] | None = None,
    store_states: bool = False,
    diagnostics: bool = True,
) -> TimeSeries:
    """Integrate the master equation and sample observers on ``t_grid``.

    The state is re-Hermitized after every accepted internal step. With
    ``diagnostics`` the series also records trace error, Hermiticity defect and
    smallest eigenvalue at each sample.
    """
    plan = plan or PropagatorPlan()
    observers = dict(observers or {})
    if rho0.layout != model.layout:
        raise DimensionError(f"initial state layout {rho0.layout.dims} vs model {model.layout.dims}")
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")

    d = model.dim
    method = _choose_method(plan, d)
    stepper = _make_stepper(method, model, plan)

    records: dict[str, list[float]] = {name: [] for name in observers}
    if diagnostics:
        for key in ("trace_error", "hermiticity_error", "min_eigenvalue"):
            records[key] = []
    states = [] if store_states else None

    if times[0] < 0:
        raise ValueError("time grid must start at t >= 0")
    vec = np.array(rho0.matrix, dtype=complex).ravel()
    # rho0 sits at t = 0; a grid starting later is reached by the first step
    t_now = 0.0
    for t in times:
        if t > t_now:
            vec = stepper(vec, t_now, float(t))
            t_now = float(t)
        mat = vec.reshape(d, d)
        rho = DensityMatrix(mat, model.layout, check=False)
        for name, fn in observers.items():
            records[name].append(float(fn(rho)))
        if diagnostics:
            for key, value in state_diagnostics(mat).items():
                records[key].append(value)
        if states is not None:
            states.append(rho)
    return TimeSeries(times, records, states)


def _make_stepper(method: str, model: LindbladModel, plan: PropagatorPlan):
    d = model.dim
    if method == "dense-exponential":
        lv = assemble_liouvillian_matrix(model, cap=plan.capacity, dense=True)
        cache: dict[float, np.ndarray] = {}

        def step(vec, t0, t1):
            dt = t1 - t0
            key = round(dt, 15)
            prop = cache.get(key)
            if prop is None:
                prop = scipy.linalg.expm(lv * dt)
                cache[key] = prop
            return _hermitize(prop @ vec, d)

        return step

    if method == "krylov-exponential":
        lv = assemble_liouvillian_matrix(model, cap=plan.capacity)
        use_si = plan.shift_invert
        if use_si is None:
            use_si = _is_stiff(lv, model)
        blocks = invariant_blocks(lv)
        mirrors = [_transpose_positions(idx, d) for idx in blocks]
        props: dict[int, object] = {}

        def block_prop(k):
            if k not in props:
                idx = blocks[k]
                sub = lv[idx][:, idx]
                if use_si:
                    props[k] = ShiftInvertPropagator(sub, tol=plan.rtol, max_dim=max(plan.krylov_dim, 40))
                else:
                    props[k] = KrylovPropagator(sub, m=plan.krylov_dim, tol=plan.rtol)
            return props[k]

        def step(vec, t0, t1):
            out = np.zeros_like(vec)
            try:
                for k, idx in enumerate(blocks):
                    part = vec[idx]
                    if not np.any(part):
                        continue
                    mirror = mirrors[k]
                    post = None if mirror is None else (lambda v, m=mirror: 0.5 * (v + v[m].conj()))
                    out[idx] = block_prop(k).propagate(part, t1 - t0, post_step=post)
            except IntegrationError as exc:
                raise IntegrationError(f"{exc} (integration started at t={t0})",
                                       t_reached=t0 + (exc.t_reached or 0.0)) from exc
            return _hermitize(out, d)

        return step

    if method == "explicit-adaptive":
        lv = assemble_liouvillian_matrix(model, cap=plan.capacity)
        max_step = np.inf
        if plan.max_step is not None:
            max_step = plan.max_step / max(model.max_rate, 1.0)

        def step(vec, t0, t1):
            return _explicit_step(lv, vec, t0, t1, plan.rtol, plan.atol, max_step, d)

        return step

    raise ValueError(f"unknown method {method!r}")


def _is_stiff(lv, model) -> bool:
    # generator norm far above the dissipative scale marks Hamiltonian stiffness
    norm = spla.norm(lv, 1)
    return norm > 1e2 * max(model.max_rate, 1.0)


def _transpose_positions(idx: np.ndarray, d: int):
    """Positions of the transposed entries (j, i) inside block ``idx``, or None
    when the block is not closed under transposition."""
    rows, cols = np.divmod(idx, d)
    flipped = cols * d + rows
    pos = np.searchsorted(idx, flipped)
    pos = np.minimum(pos, idx.size - 1)
    if not np.array_equal(idx[pos], flipped):
        return None
    return pos


def invariant_blocks(lv) -> list[np.ndarray]:
    """Index sets of vec(rho) that the generator never couples to each other.

    Weak symmetries (a parity commuting with H, collapse operators that
    commute or anticommute with it) split the Liouvillian into decoupled
    blocks; propagating them separately shrinks the sparse factorizations.
    """
    pattern = abs(sp.csr_matrix(lv))
    count, labels = connected_components(pattern, directed=True, connection="weak")
    return [np.flatnonzero(labels == k) for k in range(count)]


def _explicit_step(lv, vec, t0, t1, rtol, atol, max_step, d):
    solver = DOP853(lambda t, y: lv @ y, t0, vec, t1, rtol=rtol, atol=atol,
                    max_step=max_step)
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"explicit integrator failed: {message}", t_reached=solver.t)
        solver.y = _hermitize(solver.y, d)
        # FSAL derivative must follow the symmetrized state
        solver.f = lv @ solver.y
    return solver.y


def _null_space_candidates(lv, k: int):
    n = lv.shape[0]
    if n <= 900:
        dense = lv.toarray() if sp.issparse(lv) else np.asarray(lv)
        vals, vecs = scipy.linalg.eig(dense)
        order = np.argsort(np.abs(vals))[:k]
        return vals[order], vecs[:, order]
    # shift-invert Arnoldi around a tiny negative shift keeps the LU nonsingular
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    vals, vecs = spla.eigs(lv.tocsc(), k=k, sigma=-1e-9, which="LM", v0=v0, tol=1e-12)
    order = np.argsort(np.abs(vals))
    return vals[order], vecs[:, order]


def _null_space_dimension(vals, scale) -> int:
    return int(np.sum(np.abs(vals) <= 1e-9 * scale))


def steady_state(
    model: LindbladModel,
    method: str = "auto",
    plan: PropagatorPlan | None = None,
    t_long: float | None = None,
    cap: int = NULL_SPACE_MAX_DIM,
) -> DensityMatrix:
    """Stationary state of the model.

    ``null-space`` finds the Liouvillian eigenvectors of smallest modulus and
    raises DegenerateSteadyStateError when more than one eigenvalue is zero.
    ``long-time`` evolves from the maximally mixed state for ``t_long`` (default
    200 divided by the smallest nonzero rate).
    """
    if not any(rate > 0 for rate, _ in model.collapse_terms):
        raise DegenerateSteadyStateError("model without dissipation has no unique steady state", -1)
    d = model.dim
    if method == "auto":
        method = "null-space" if d <= cap else "long-time"
    if method == "null-space":
        lv = assemble_liouvillian_matrix(model, cap=cap)
        scale = max(model.max_rate, float(np.max(np.abs(model.hamiltonian.matrix))), 1.0)
        vals, vecs = _null_space_candidates(lv, k=3)
        dim = _null_space_dimension(vals, scale)
        if dim > 1:
            raise DegenerateSteadyStateError(
                f"Liouvillian null space has dimension {dim} (eigenvalues {vals[:dim]})", dim
            )
        if dim == 0:
            log.warning("smallest Liouvillian eigenvalue %.3e is not numerically zero", abs(vals[0]))
        mat = vecs[:, 0].reshape(d, d)
    elif method == "long-time":
        rates = [r for r, _ in model.collapse_terms if r > 0]
        t_end = t_long if t_long is not None else 200.0 / min(rates)
        rho0 = DensityMatrix(np.eye(d) / d, model.layout)
        series = evolve(model, rho0, [t_end], plan, store_states=True, diagnostics=False)
        mat = np.asarray(series.states[-1].matrix)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")
    mat = mat / np.trace(mat)
    mat = 0.5 * (mat + mat.conj().T)
    return DensityMatrix(mat, model.layout, check=False)


def steady_state_residual(model: LindbladModel, rho: DensityMatrix) -> float:
    return float(np.max(np.abs(liouvillian_apply(model, rho))))
