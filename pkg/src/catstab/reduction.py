"""Check of the adiabatic elimination of readout r2.

The storage/r2 density matrix is expanded in the r2 Fock basis,
rho = rho00 |0><0| + delta (rho10 |1><0| + rho01 |0><1|) + delta^2 rho11 |1><1| + ...,
with delta = g_ps / kappa_r2 and time tau = kappa_r2 t. The blocks obey a
closed linear cascade on the storage space; integrating it gives the
population transfer |2n~+1> -> |2n~> without any elimination, which is then
compared with the closed-form parity-selection rate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DimensionError, IntegrationError
from .fock import DensityMatrix, cat_state, destroy, fock_projector, partial_trace
from .lindblad import PropagatorPlan, TimeSeries, evolve
from .models import ThreeModeParams, effective_model, rate_kappa_ps, three_mode_model
from .observables import fidelity

BLOCKS = ("rho00", "rho11", "rho01", "rho10", "rho20", "rho02")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CascadeState:
    """Storage-space blocks of the expansion in delta, at time ``tau``."""

    rho00: np.ndarray
    rho11: np.ndarray
    rho01: np.ndarray
    rho10: np.ndarray
    rho20: np.ndarray
    rho02: np.ndarray
    delta: float
    n_tilde: int
    tau: float = 0.0

    def __post_init__(self):
        shape = np.shape(self.rho00)
        for name in BLOCKS:
            block = np.asarray(getattr(self, name), dtype=complex)
            if block.shape != shape or block.ndim != 2 or shape[0] != shape[1]:
                raise DimensionError(f"block {name} has shape {block.shape}, expected square {shape}")
            object.__setattr__(self, name, block)
        if shape[0] < 2 * self.n_tilde + 3:
            raise DimensionError(
                f"storage dimension {shape[0]} is below 2*n_tilde+3 = {2 * self.n_tilde + 3}"
            )

    @classmethod
    def initial(cls, delta: float, n_tilde: int = 2, dim: int | None = None,
                population: float = 1.0) -> "CascadeState":
        """All population in |2n~+1> of rho00, every other block empty."""
        dim = dim or 2 * n_tilde + 3
        zero = np.zeros((dim, dim), dtype=complex)
        rho00 = zero.copy()
        rho00[2 * n_tilde + 1, 2 * n_tilde + 1] = population
        return cls(rho00, zero, zero, zero, zero, zero, delta, n_tilde)

    @property
    def dim(self) -> int:
        return self.rho00.shape[0]

    @property
    def upper(self) -> float:
        """rho00 population of |2n~+1>."""
        k = 2 * self.n_tilde + 1
        return float(self.rho00[k, k].real)

    @property
    def lower(self) -> float:
        """rho00 population of |2n~>."""
        k = 2 * self.n_tilde
        return float(self.rho00[k, k].real)

    def population(self) -> float:
        """Tr rho00 + delta^2 Tr rho11, conserved by the cascade."""
        return float((np.trace(self.rho00) + self.delta**2 * np.trace(self.rho11)).real)

    def hermiticity_defect(self) -> float:
        return max(
            float(np.max(np.abs(self.rho00 - self.rho00.conj().T))),
            float(np.max(np.abs(self.rho11 - self.rho11.conj().T))),
            float(np.max(np.abs(self.rho01 - self.rho10.conj().T))),
            float(np.max(np.abs(self.rho02 - self.rho20.conj().T))),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in BLOCKS])

    @classmethod
    def from_vector(cls, vec, delta, n_tilde, tau=0.0) -> "CascadeState":
        vec = np.asarray(vec, dtype=complex)
        dim = math.isqrt(vec.size // len(BLOCKS))
        parts = vec.reshape(len(BLOCKS), dim, dim)
        return cls(*parts, delta=delta, n_tilde=n_tilde, tau=tau)


def _ladder(dim: int, n_tilde: int):
    a = np.asarray(destroy(dim).matrix)
    p1 = np.asarray(fock_projector(2 * n_tilde + 1, dim).matrix)
    p2 = np.asarray(fock_projector(2 * n_tilde + 2, dim).matrix)
    a1 = a @ p1
    a2 = a @ p2
    return a1, a1.conj().T, a2, a2.conj().T


def _rhs_blocks(r00, r11, r01, r10, r20, r02, d2, ops):
    a1, a1d, a2, a2d = ops
    d00 = -1j * d2 * (a1d @ r10 - r01 @ a1) + d2 * np.diag(np.diag(r11))
    d11 = -1j * (a1 @ r01 - r10 @ a1d) - r11
    d01 = -1j * (d2 * a1d @ r11 - r00 @ a1d - SQRT2 * d2 * r02 @ a2) - 0.5 * r01
    d10 = -1j * (a1 @ r00 + SQRT2 * d2 * a2d @ r20 - d2 * r11 @ a1) - 0.5 * r10
    d20 = -1j * SQRT2 * a2 @ r10 - r20
    d02 = 1j * SQRT2 * r01 @ a2d - r02
    return d00, d11, d01, d10, d20, d02


def cascade_rhs(state: CascadeState) -> CascadeState:
    """d/dtau of every block; the result carries the same delta, n_tilde and tau."""
    ops = _ladder(state.dim, state.n_tilde)
    blocks = [getattr(state, name) for name in BLOCKS]
    derivs = _rhs_blocks(*blocks, state.delta**2, ops)
    return CascadeState(*derivs, delta=state.delta, n_tilde=state.n_tilde, tau=state.tau)


@dataclass
class CascadeSeries:
    """Populations of rho00 on the sampled tau grid, plus the running area under ``upper``."""

    tau: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    population: np.ndarray
    area: np.ndarray
    hermiticity: np.ndarray
    final: CascadeState

    def to_timeseries(self) -> TimeSeries:
        return TimeSeries(self.tau, {"upper": self.upper, "lower": self.lower,
                                     "population": self.population})


def integrate_cascade(initial: CascadeState, tau_end: float, samples: int = 2001,
                      rtol: float = 1e-10, atol: float = 1e-13) -> CascadeSeries:
    """Integrate the cascade from ``initial.tau`` to ``tau_end`` with DOP853."""
    if tau_end <= initial.tau:
        raise ValueError("tau_end must exceed the initial tau")
    d, n_tilde, delta = initial.dim, initial.n_tilde, initial.delta
    d2 = delta**2
    ops = _ladder(d, n_tilde)
    k = 2 * n_tilde + 1
    size = len(BLOCKS) * d * d

    def rhs(_tau, y):
        parts = y[:size].reshape(len(BLOCKS), d, d)
        derivs = _rhs_blocks(*parts, d2, ops)
        out = np.empty_like(y)
        out[:size] = np.concatenate([b.ravel() for b in derivs])
        out[size] = parts[0][k, k]
        return out

    y0 = np.append(initial.to_vector(), 0.0)
    grid = np.linspace(initial.tau, tau_end, samples)
    sol = solve_ivp(rhs, (initial.tau, tau_end), y0, method="DOP853", t_eval=grid,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"cascade integration failed: {sol.message}",
                               t_reached=float(sol.t[-1]) if sol.t.size else initial.tau)
    upper, lower, pop, herm = [], [], [], []
    for col in sol.y.T:
        st = CascadeState.from_vector(col[:size], delta, n_tilde)
        upper.append(st.upper)
        lower.append(st.lower)
        pop.append(st.population())
        herm.append(st.hermiticity_defect())
    final = CascadeState.from_vector(sol.y[:size, -1], delta, n_tilde, tau=float(sol.t[-1]))
    return CascadeSeries(sol.t, np.array(upper), np.array(lower), np.array(pop),
                         sol.y[size].real.copy(), np.array(herm), final)


def formula_rate(delta: float, n_tilde: int = 2) -> float:
    """Parity-selection rate in units of kappa_r2: x / (1 + x), x = 4 delta^2 (2n~+1)."""
    return rate_kappa_ps(delta, 1.0, n_tilde)


@dataclass(frozen=True)
class DecayFit:
    """Transfer rate |2n~+1> -> |2n~> from the cascade, in units of kappa_r2.

    ``fitted_rate`` is the inverse mean residence time P(0) / int P dtau.
    ``log_slope_rate`` is the least-squares slope of log P after the fast
    transient; it equals the former only when the decay is a single
    exponential, i.e. for small delta.
    """

    delta: float
    n_tilde: int
    fitted_rate: float
    formula_rate: float
    relative_error: float
    log_slope_rate: float

    CSV_FIELDS = ("delta", "n_tilde", "fitted_rate", "formula_rate", "relative_error")


def decay_fits_to_csv(fits, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(DecayFit.CSV_FIELDS)
    for fit in fits:
        writer.writerow([repr(getattr(fit, name)) for name in DecayFit.CSV_FIELDS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _log_slope(tau, pop, start, floor):
    mask = (tau >= start) & (pop > floor)
    if np.count_nonzero(mask) < 3:
        return math.nan
    slope = np.polyfit(tau[mask], np.log(pop[mask]), 1)[0]
    return float(-slope)


def fit_decay_rate(delta: float, n_tilde: int = 2, population: float = 1.0,
                   window_start: float = 5.0, floor: float = 1e-6, chunk: float = 50.0,
                   cutoff: float = 1e-10, tau_max: float = 1e5) -> DecayFit:
    """Integrate from pure |2n~+1> until its population drops below ``cutoff``.

    The remaining area beyond the last sample is closed with the late-time
    exponential, which is negligible at the default cutoff.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    state = CascadeState.initial(delta, n_tilde, population=population)
    taus, pops = [np.array([0.0])], [np.array([population])]
    area = 0.0
    while True:
        series = integrate_cascade(state, state.tau + chunk, samples=int(chunk * 10) + 1)
        taus.append(series.tau[1:])
        pops.append(series.upper[1:])
        area += series.area[-1]
        state = series.final
        if np.max(np.abs(series.upper)) < cutoff * population:
            break
        if state.tau >= tau_max:
            raise IntegrationError(f"population still above cutoff at tau={state.tau}",
                                   t_reached=state.tau)
    tau = np.concatenate(taus)
    pop = np.concatenate(pops)
    tail_rate = _log_slope(tau[-len(pops[-1]):], pop[-len(pops[-1]):], 0.0, 0.0)
    if math.isfinite(tail_rate) and tail_rate > 0 and pop[-1] > 0:
        area += pop[-1] / tail_rate
    fitted = population / area
    expected = formula_rate(delta, n_tilde)
    return DecayFit(
        delta=float(delta),
        n_tilde=int(n_tilde),
        fitted_rate=float(fitted),
        formula_rate=expected,
        relative_error=abs(fitted - expected) / expected,
        log_slope_rate=_log_slope(tau, pop / population, window_start, floor),
    )


def block_steady_states(state: CascadeState) -> dict[str, complex]:
    """Fast-block matrix elements at their stationary values, given the slow rho00.

    Matrix elements use the two-level sector: ``upper`` = <2n~+1|.|2n~+1>,
    ``lower`` = <2n~|.|2n~>, ``bar`` = <2n~|.|2n~+1>, ``barbar`` = <2n~+1|.|2n~>.
    The pair rho11_lower / rho10_bar is solved jointly, since each
    stationary value depends on the other.
    """
    s = math.sqrt(2 * state.n_tilde + 1)
    d2 = state.delta**2
    lo, up = 2 * state.n_tilde, 2 * state.n_tilde + 1
    x = state.rho00[up, up]
    y = x / (1.0 + 4.0 * s * s * d2)
    rho10_bar = -2j * s * y
    rho01_barbar = -rho10_bar
    # the upper-level coherences of rho11 relax to zero, which pins the rest
    rho11_bar = rho11_barbar = 0.0j
    return {
        "rho11_upper": 0.0j,
        "rho11_bar": rho11_bar,
        "rho11_barbar": rho11_barbar,
        "rho01_upper": -2j * d2 * s * rho11_bar,
        "rho10_upper": 2j * d2 * s * rho11_barbar,
        "rho10_bar": rho10_bar,
        "rho01_barbar": rho01_barbar,
        "rho11_lower": -1j * s * (rho01_barbar - rho10_bar),
        "rho01_lower": 2j * s * state.rho00[lo, up],
        "rho10_lower": -2j * s * state.rho00[up, lo],
    }


def steady_fast_blocks(state: CascadeState) -> CascadeState:
    """Copy of ``state`` with rho11, rho01, rho10 set from ``block_steady_states``
    and the second-order blocks cleared."""
    ss = block_steady_states(state)
    lo, up = 2 * state.n_tilde, 2 * state.n_tilde + 1
    shape = state.rho00.shape
    r11 = np.zeros(shape, dtype=complex)
    r01 = np.zeros(shape, dtype=complex)
    r10 = np.zeros(shape, dtype=complex)
    r11[up, up], r11[lo, up], r11[up, lo], r11[lo, lo] = (
        ss["rho11_upper"], ss["rho11_bar"], ss["rho11_barbar"], ss["rho11_lower"])
    r01[up, up], r01[up, lo], r01[lo, lo] = ss["rho01_upper"], ss["rho01_barbar"], ss["rho01_lower"]
    r10[up, up], r10[lo, up], r10[lo, lo] = ss["rho10_upper"], ss["rho10_bar"], ss["rho10_lower"]
    zero = np.zeros(shape, dtype=complex)
    return replace(state, rho11=r11, rho01=r01, rho10=r10, rho20=zero, rho02=zero.copy())


def fast_block_residual(state: CascadeState) -> float:
    """Largest fast-block derivative once the fast blocks sit at their stationary values."""
    deriv = cascade_rhs(steady_fast_blocks(state))
    return max(float(np.max(np.abs(getattr(deriv, name)))) for name in BLOCKS[1:])


def eliminated_rhs(state: CascadeState) -> tuple[float, float]:
    """d/dtau of (upper, lower) populations of rho00 with the fast blocks eliminated."""
    ss = block_steady_states(state)
    s = math.sqrt(2 * state.n_tilde + 1)
    flow = -1j * state.delta**2 * s * (ss["rho10_bar"] - ss["rho01_barbar"])
    return float(flow.real), float(-flow.real)


# --- full three-mode model against the effective storage model -------------------

@dataclass
class ModelComparison:
    params: ThreeModeParams
    series: TimeSeries

    @property
    def full(self) -> np.ndarray:
        return self.series["fidelity_full"]

    @property
    def reduced(self) -> np.ndarray:
        return self.series["fidelity_reduced"]

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.full - self.reduced)))


def comparison_grid(t_end: float = 0.5, fine_until: float = 0.05, fine_steps: int = 20,
                    coarse_steps: int = 18) -> np.ndarray:
    """Time grid dense over the fast transient and coarse over the plateau."""
    fine = np.linspace(0.0, fine_until, fine_steps + 1)
    coarse = np.linspace(fine_until, t_end, coarse_steps + 1)[1:]
    return np.concatenate([fine, coarse])


def compare_models(params: ThreeModeParams, t_grid=None, plan: PropagatorPlan | None = None,
                   effective_dim: int | None = None) -> ModelComparison:
    """Storage fidelity to the even cat under the three-mode model and its effective model.

    Both start from vacuum. The effective model uses the mapped rates at the
    storage truncation of the three-mode layout unless ``effective_dim`` is
    given; the target cat amplitude is sqrt(eps_r1 / g_2ph), or vacuum when
    the two-photon coupling is switched off.
    """
    t_grid = comparison_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    ns = params.layout.dims[0]
    eff_dim = effective_dim or ns
    alpha = params.alpha() if params.g_2ph else 0.0
    target_s = cat_state(alpha, +1, ns)
    target_e = cat_state(alpha, +1, eff_dim)

    full_model = three_mode_model(params)
    rho0 = np.zeros((full_model.dim, full_model.dim), dtype=complex)
    rho0[0, 0] = 1.0
    full = evolve(full_model, DensityMatrix(rho0, full_model.layout), t_grid, plan,
                  observers={"fidelity": lambda r: fidelity(partial_trace(r, [0]), target_s)},
                  diagnostics=False)

    eff = params.effective(eff_dim)
    vac = np.zeros((eff_dim, eff_dim), dtype=complex)
    vac[0, 0] = 1.0
    reduced = evolve(effective_model(eff), DensityMatrix(vac), t_grid, plan,
                     observers={"fidelity": lambda r: fidelity(r, target_e)}, diagnostics=False)

    series = TimeSeries(t_grid, {"fidelity_full": full["fidelity"],
                                 "fidelity_reduced": reduced["fidelity"]})
    return ModelComparison(params, series)

