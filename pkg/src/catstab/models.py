"""Concrete master equations for cat-state stabilization and the engineered rates.

All rates are in units of the storage single-photon loss rate kappa_1ph and
times in units of 1/kappa_1ph.

* ``effective_model`` - storage cavity alone: two-photon drive and loss,
  single-photon loss and the parity-selecting jump |2n~><2n~+1|.
* ``three_mode_model`` - storage s, readouts r1 and r2 in the frame rotating
  with the pumps; r1 mediates two-photon exchange, r2 the conditional
  beam-splitter tuned by the cross-Kerr shift.
* ``two_mode_reduced_model`` - s and r2 after eliminating r1, in the frame of
  the cross-Kerr term.
"""

from __future__ import annotations

import cmath
import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ConfigError, DimensionError, HierarchyWarning
from .fock import (
    DEFAULT_READOUT_DIM,
    DEFAULT_STORAGE_DIM,
    ModeLayout,
    Operator,
    destroy,
    embed,
    fock_projector,
    identity,
    jump,
    tensor,
)
from .lindblad import LindbladModel

HIERARCHY_RATIO = 0.2


def default_n_tilde(alpha: complex) -> int:
    """Half of the even integer closest to |alpha|^2 (ties round down)."""
    mean = abs(alpha) ** 2
    lower = 2 * math.floor(mean / 2)
    upper = lower + 2
    two_n = lower if mean - lower <= upper - mean else upper
    return two_n // 2


@dataclass(frozen=True)
class EffectiveParams:
    kappa_1ph: float = 1.0
    kappa_2ph: float = 250.0
    kappa_ps: float = 760.0
    eps_2ph: complex = 500.0
    n_tilde: int = 2
    target_parity: str = "+"
    dim: int = DEFAULT_STORAGE_DIM

    def __post_init__(self):
        for name in ("kappa_1ph", "kappa_2ph", "kappa_ps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_tilde < 0:
            raise ValueError("n_tilde must be non-negative")
        if self.target_parity not in ("+", "-"):
            raise ValueError("target_parity must be '+' or '-'")
        object.__setattr__(self, "eps_2ph", complex(self.eps_2ph))

    @classmethod
    def for_alpha(cls, alpha: float, kappa_2ph: float, **kw) -> "EffectiveParams":
        """Drive chosen so the two-photon steady manifold sits at +/- alpha."""
        kw.setdefault("n_tilde", default_n_tilde(alpha))
        return cls(kappa_2ph=kappa_2ph, eps_2ph=kappa_2ph * alpha**2 / 2, **kw)

    @property
    def alpha(self) -> complex:
        if self.kappa_2ph == 0:
            raise ValueError("alpha is undefined without two-photon dissipation")
        return cmath.sqrt(2 * self.eps_2ph / self.kappa_2ph)


@dataclass(frozen=True)
class ThreeModeParams:
    g_2ph: float = 250.0
    g_ps: float = 400.0
    eps_r1: float = 1000.0
    chi_sr2: float = 2.5e4
    kappa_r1: float = 1000.0
    kappa_r2: float = 1000.0
    kappa_1ph: float = 1.0
    n_tilde: int = 2
    layout: ModeLayout = field(default_factory=lambda: ModeLayout((20, 3, 3)))
    self_kerr: bool = False
    chi_ss: float = 0.0
    chi_r1r1: float = 0.0
    chi_r2r2: float = 0.0

    def __post_init__(self):
        if not isinstance(self.layout, ModeLayout):
            object.__setattr__(self, "layout", ModeLayout(tuple(self.layout)))
        for name in ("kappa_r1", "kappa_r2", "kappa_1ph"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_tilde < 0:
            raise ValueError("n_tilde must be non-negative")

    def replace(self, **changes) -> "ThreeModeParams":
        return dataclasses.replace(self, **changes)

    @property
    def delta(self) -> float:
        return self.g_ps / self.kappa_r2

    def alpha(self) -> complex:
        return alpha_from_drive(self.eps_r1, self.g_2ph, self.kappa_r1)[0]

    def effective(self, dim: int | None = None) -> EffectiveParams:
        """Single-mode parameters obtained from the elimination formulas."""
        dim = dim or self.layout.dims[0]
        k2 = rate_kappa_2ph(self.g_2ph, self.kappa_r1)
        return EffectiveParams(
            kappa_1ph=self.kappa_1ph,
            kappa_2ph=k2,
            kappa_ps=rate_kappa_ps(self.g_ps, self.kappa_r2, self.n_tilde),
            eps_2ph=two_photon_drive(self.eps_r1, self.g_2ph, self.kappa_r1),
            n_tilde=self.n_tilde,
            dim=dim,
        )


@dataclass(frozen=True)
class PumpParams:
    eps_p: float
    eps_p_prime: float
    omega_s: float
    omega_r1: float
    omega_r2: float
    omega_p: float
    omega_p_prime: float
    chi_sr1: float
    chi_r2r2: float
    chi_sr2: float
    chi_ss: float = 0.0
    chi_r1r1: float = 0.0

    def __post_init__(self):
        for name in ("omega_s", "omega_r1", "omega_r2", "omega_p", "omega_p_prime"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def tuned(cls, eps_p, eps_p_prime, omega_s, omega_r1, omega_r2, chi_sr1, chi_r2r2,
              chi_sr2, n_tilde, **kw) -> "PumpParams":
        """Pump frequencies set to the two resonance conditions of the scheme."""
        return cls(
            eps_p=eps_p, eps_p_prime=eps_p_prime, omega_s=omega_s, omega_r1=omega_r1,
            omega_r2=omega_r2,
            omega_p=two_photon_pump_frequency(omega_s, omega_r1),
            omega_p_prime=parity_pump_frequency(omega_s, omega_r2, chi_sr2, n_tilde),
            chi_sr1=chi_sr1, chi_r2r2=chi_r2r2, chi_sr2=chi_sr2, **kw,
        )


def two_photon_pump_frequency(omega_s: float, omega_r1: float) -> float:
    return 2 * omega_s - omega_r1


def parity_pump_frequency(omega_s, omega_r2, chi_sr2, n_tilde) -> float:
    return (omega_r2 - omega_s - 2 * n_tilde * chi_sr2) / 2


def rate_kappa_2ph(g_2ph: float, kappa_r1: float) -> float:
    """Two-photon loss rate after eliminating readout r1: 4 g^2 / kappa_r1."""
    if kappa_r1 == 0:
        raise ZeroDivisionError("kappa_r1 must be non-zero")
    return 4.0 * g_2ph**2 / kappa_r1


def rate_kappa_ps(g_ps: float, kappa_r2: float, n_tilde: int) -> float:
    """Parity-selection rate kappa_r2 * x / (1 + x), x = 4 (g/kappa_r2)^2 (2n~+1)."""
    if kappa_r2 == 0:
        raise ZeroDivisionError("kappa_r2 must be non-zero")
    x = 4.0 * (g_ps / kappa_r2) ** 2 * (2 * n_tilde + 1)
    return x / (1.0 + x) * kappa_r2


def two_photon_drive(eps_r1: float, g_2ph: float, kappa_r1: float) -> float:
    if kappa_r1 == 0:
        raise ZeroDivisionError("kappa_r1 must be non-zero")
    return 2.0 * g_2ph * eps_r1 / kappa_r1


def pump_g_2ph(pp: PumpParams) -> float:
    detuning = pp.omega_p - pp.omega_r1
    if detuning == 0:
        raise ZeroDivisionError("pump resonant with readout r1")
    return pp.eps_p / detuning * pp.chi_sr1 / 2


def pump_g_ps(pp: PumpParams) -> float:
    detuning = pp.omega_p_prime - pp.omega_r2
    if detuning == 0:
        raise ZeroDivisionError("pump resonant with readout r2")
    return math.sqrt(pp.chi_r2r2 * pp.chi_sr2) * abs(pp.eps_p_prime / detuning) ** 2


def alpha_from_drive(eps_r1: float, g_2ph: float, kappa_r1: float) -> tuple[complex, float]:
    """Cat amplitude sqrt(eps_r1 / g_2ph) and the induced two-photon drive.

    Returns ``(alpha, eps_2ph)``.
    """
    if g_2ph == 0:
        raise ZeroDivisionError("g_2ph must be non-zero")
    return cmath.sqrt(eps_r1 / g_2ph), two_photon_drive(eps_r1, g_2ph, kappa_r1)


def check_rate_hierarchy(p: ThreeModeParams, emit: bool = False) -> list[str]:
    """Violated time-scale separations; "a << b" means a / b <= 0.2."""
    issues = []

    def much_less(a, b, label):
        if b <= 0 or a / b > HIERARCHY_RATIO:
            issues.append(f"{label}: ratio {a / b if b else math.inf:.3g} exceeds {HIERARCHY_RATIO}")

    much_less(p.kappa_1ph, p.kappa_r1, "kappa_1ph << kappa_r1 (slow storage loss)")
    much_less(p.kappa_1ph, p.kappa_r2, "kappa_1ph << kappa_r2 (slow storage loss)")
    much_less(p.kappa_r2, p.chi_sr2, "kappa_r2 << chi_sr2 (number selectivity)")
    much_less(p.g_ps, p.chi_sr2, "g_ps << chi_sr2 (number selectivity)")
    if p.g_2ph > p.kappa_r1:
        issues.append(f"g_2ph <= kappa_r1 (adiabaticity): {p.g_2ph} > {p.kappa_r1}")
    if emit:
        for msg in issues:
            warnings.warn(msg, HierarchyWarning, stacklevel=2)
    return issues


def _two_photon_hamiltonian(a: Operator, eps: complex) -> Operator:
    a2 = a @ a
    return 1j * (eps * a2.dag() - eps.conjugate() * a2)


def effective_model(p: EffectiveParams) -> LindbladModel:
    """Storage-only master equation with engineered two-photon and parity-selection baths."""
    dim = p.dim
    a = destroy(dim)
    two_n = 2 * p.n_tilde
    if p.target_parity == "+":
        lower, upper = two_n, two_n + 1
    else:
        lower, upper = two_n - 1, two_n
        if lower < 0:
            raise ValueError("odd target needs n_tilde >= 1")
    terms = [
        (p.kappa_2ph, a @ a),
        (p.kappa_1ph, a),
        (p.kappa_ps, jump(lower, upper, dim)),
    ]
    return LindbladModel(_two_photon_hamiltonian(a, p.eps_2ph), tuple(terms), name="effective")


def _self_kerr(op: Operator, chi: float) -> Operator:
    ad = op.dag()
    return -0.5 * chi * (ad @ ad @ op @ op)


def three_mode_model(p: ThreeModeParams) -> LindbladModel:
    """Storage plus two readouts in the rotating frame of the pumps."""
    layout = p.layout
    if layout.n_modes != 3:
        raise DimensionError(f"three-mode model needs 3 modes, layout is {layout.dims}")
    ns, n1, n2 = layout.dims
    a_s = embed(destroy(ns), 0, layout)
    a_1 = embed(destroy(n1), 1, layout)
    a_2 = embed(destroy(n2), 2, layout)
    eye = identity(layout)
    two_photon = p.g_2ph * (a_s.dag() @ a_s.dag() @ a_1 + a_s @ a_s @ a_1.dag())
    drive = -p.eps_r1 * (a_1 + a_1.dag())
    beam_splitter = p.g_ps * (a_s @ a_2.dag() + a_s.dag() @ a_2)
    cross_kerr = p.chi_sr2 * ((2 * p.n_tilde) * eye - a_s.dag() @ a_s) @ (a_2.dag() @ a_2)
    h = two_photon + drive + beam_splitter + cross_kerr
    if p.self_kerr:
        h = h + _self_kerr(a_s, p.chi_ss) + _self_kerr(a_1, p.chi_r1r1) + _self_kerr(a_2, p.chi_r2r2)
    terms = ((p.kappa_r1, a_1), (p.kappa_r2, a_2), (p.kappa_1ph, a_s))
    return LindbladModel(h, terms, name="three_mode")


def two_mode_reduced_model(p: ThreeModeParams) -> LindbladModel:
    """Storage and r2 after eliminating r1, in the frame of the cross-Kerr term.

    Every operator carries the projector dressing of the rotating-wave
    reduction: the two-photon terms act only with r2 in vacuum, the
    beam-splitter only on resonant |2n~+1-j>_s |j>_r2 pairs, and the losses
    are resolved in the Fock basis of the other mode.
    """
    layout = p.layout
    if layout.n_modes != 2:
        raise DimensionError(f"two-mode model needs 2 modes (s, r2), layout is {layout.dims}")
    ns, n2 = layout.dims
    a_s1 = destroy(ns)
    a_r1 = destroy(n2)
    eye_s = identity(ns)
    eye_r = identity(n2)
    a_s = tensor(a_s1, eye_r)
    a_2 = tensor(eye_s, a_r1)
    vac_r2 = tensor(eye_s, fock_projector(0, n2))

    kappa_2ph = rate_kappa_2ph(p.g_2ph, p.kappa_r1)
    eps = complex(two_photon_drive(p.eps_r1, p.g_2ph, p.kappa_r1))
    a2 = a_s @ a_s
    h = 1j * (eps * a2.dag() - eps.conjugate() * a2) @ vac_r2

    top = 2 * p.n_tilde + 1
    hop = a_s.dag() @ a_2
    for j in range(0, top + 1):
        if top - j >= ns or j >= n2:
            continue
        proj = tensor(fock_projector(top - j, ns), fock_projector(j, n2))
        h = h + p.g_ps * (proj @ hop + hop.dag() @ proj)

    terms = [(kappa_2ph, a2 @ vac_r2)]
    for j in range(ns):
        terms.append((p.kappa_r2, a_2 @ tensor(fock_projector(j, ns), eye_r)))
    for j in range(n2):
        terms.append((p.kappa_1ph, a_s @ tensor(eye_s, fock_projector(j, n2))))
    return LindbladModel(h, tuple(terms), name="two_mode")


# --- JSON parameter loading -------------------------------------------------

PARAM_TYPES = {
    "effective": EffectiveParams,
    "three_mode": ThreeModeParams,
    "two_mode": ThreeModeParams,
}


def params_from_dict(kind: str, data: Mapping[str, Any]):
    """Build a parameter object; unknown keys raise ConfigError naming the key."""
    try:
        cls = PARAM_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown model {kind!r}; expected one of {sorted(PARAM_TYPES)}") from None
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        err = ConfigError(f"unknown parameter {unknown[0]!r} for model {kind!r}")
        err.key = unknown[0]
        raise err
    values = dict(data)
    if "layout" in values:
        values["layout"] = ModeLayout(tuple(values["layout"]))
    elif kind == "two_mode":
        values["layout"] = ModeLayout((20, DEFAULT_READOUT_DIM))
    if "eps_2ph" in values and isinstance(values["eps_2ph"], (list, tuple)):
        re, im = values["eps_2ph"]
        values["eps_2ph"] = complex(re, im)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        err = ConfigError(f"invalid parameters for model {kind!r}: {exc}")
        raise err from exc


def params_to_dict(params) -> dict:
    out = {}
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        if isinstance(value, ModeLayout):
            value = list(value.dims)
        elif isinstance(value, complex):
            value = value.real if value.imag == 0 else [value.real, value.imag]
        out[f.name] = value
    return out


def load_params(kind: str, path) -> Any:
    with open(path) as fh:
        return params_from_dict(kind, json.load(fh))


def build_model(kind: str, params) -> LindbladModel:
    if kind == "effective":
        return effective_model(params)
    if kind == "three_mode":
        return three_mode_model(params)
    if kind == "two_mode":
        return two_mode_reduced_model(params)
    raise ConfigError(f"unknown model {kind!r}")

