"""Fidelity, photon statistics and Wigner functions of storage-mode states."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_genlaguerre

from .errors import DimensionError, TruncationWarning
from .fock import DensityMatrix, StateVector, destroy

log = logging.getLogger(__name__)

WIGNER_PAD = 10
DEFAULT_EXTENT = 4.0
DEFAULT_POINTS = 81


def fidelity(rho: DensityMatrix, target: StateVector) -> float:
    """<psi|rho|psi>, clipped to [0, 1]."""
    if rho.layout != target.layout:
        raise DimensionError(f"layout mismatch: {rho.layout.dims} vs {target.layout.dims}")
    psi = target.amplitudes
    value = complex(np.vdot(psi, np.asarray(rho.matrix) @ psi))
    if abs(value.imag) > 1e-12:
        log.debug("fidelity has imaginary part %.2e", value.imag)
    f = value.real
    if f < -1e-8 or f > 1 + 1e-8:
        log.warning("fidelity %.3e outside [0, 1]; clipping", f)
    return min(max(f, 0.0), 1.0)


def _single_mode(rho: DensityMatrix) -> np.ndarray:
    if rho.layout.n_modes != 1:
        raise DimensionError(
            f"expected a single-mode state, got layout {rho.layout.dims}; partial-trace first"
        )
    return np.asarray(rho.matrix)


def photon_pmf(rho: DensityMatrix) -> np.ndarray:
    return np.real(np.diag(_single_mode(rho))).copy()


def mean_photon(rho: DensityMatrix) -> float:
    pmf = photon_pmf(rho)
    return float(np.arange(pmf.size) @ pmf)


def mean_parity(rho: DensityMatrix) -> float:
    pmf = photon_pmf(rho)
    return float(((-1.0) ** np.arange(pmf.size)) @ pmf)


@dataclass(frozen=True)
class WignerGrid:
    """W sampled on a rectangular grid; ``values[i, j] = W(x_axis[i], p_axis[j])``.

    Phase-space coordinates are x = Re(beta), p = Im(beta), so that the
    integral of W over dx dp equals the trace.
    """

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.x_axis), len(self.p_axis)):
            raise ValueError("value matrix does not match the grid axes")

    def integral(self) -> float:
        inner = np.trapezoid(self.values, self.p_axis, axis=1)
        return float(np.trapezoid(inner, self.x_axis))

    def min(self) -> float:
        return float(self.values.min())

    def at(self, x: float, p: float) -> float:
        i = int(np.argmin(np.abs(self.x_axis - x)))
        j = int(np.argmin(np.abs(self.p_axis - p)))
        return float(self.values[i, j])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["x", "p", "W"])
        for i, x in enumerate(self.x_axis):
            for j, p in enumerate(self.p_axis):
                writer.writerow([repr(float(x)), repr(float(p)), repr(float(self.values[i, j]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_svg(self, path=None, title: str = "Wigner function") -> str:
        from .svg import heatmap

        # rows of the image run along p (top = +p), columns along x
        text = heatmap(self.values.T[::-1], self.x_axis, self.p_axis[::-1],
                       diverging=True, title=title, xlabel="Re beta", ylabel="Im beta")
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Displacer:
    """D(beta) = R(theta) exp(r (a^dag - a)) R(theta)^dag via one eigendecomposition."""

    def __init__(self, dim: int):
        a = np.asarray(destroy(dim).matrix)
        gen = 1j * (a.conj().T - a)  # Hermitian
        self.eigvals, self.eigvecs = np.linalg.eigh(gen)
        self.n = np.arange(dim)
        self.parity = (-1.0) ** self.n

    def __call__(self, beta: complex) -> np.ndarray:
        r, theta = abs(beta), math.atan2(beta.imag, beta.real)
        u = self.eigvecs
        core = (u * np.exp(-1j * r * self.eigvals)) @ u.conj().T
        phase = np.exp(1j * theta * self.n)
        return phase[:, None] * core * phase.conj()[None, :]

    def wigner(self, rho: np.ndarray, beta: complex) -> complex:
        d = self(beta)
        # (2/pi) Tr[D^dag rho D P]: parity readout of rho displaced by -beta
        shifted = d.conj().T @ rho @ d
        return 2.0 / math.pi * complex(np.sum(self.parity * np.diag(shifted)))


def default_axis(extent: float = DEFAULT_EXTENT, points: int = DEFAULT_POINTS) -> np.ndarray:
    return np.linspace(-extent, extent, points)


def _laguerre_block(mat, betas):
    """Exact W on an array of points from the Fock-basis Wigner functions.

    With X = D(beta) P D(beta)^dag, for k >= m
    <k|X|m> = (-1)^m sqrt(m!/k!) (2 beta)^(k-m) e^{-2|beta|^2} L_m^(k-m)(4|beta|^2).
    """
    n = mat.shape[0]
    r2 = np.abs(betas) ** 2
    env = np.exp(-2.0 * r2)
    two_beta = 2.0 * betas
    total = np.zeros(betas.shape, dtype=complex)
    for m in range(n):
        for k in range(m, n):
            rho_mk = mat[m, k]
            if rho_mk == 0:
                continue
            coef = (-1) ** m * math.exp(0.5 * (math.lgamma(m + 1) - math.lgamma(k + 1)))
            x = coef * two_beta ** (k - m) * eval_genlaguerre(m, k - m, 4.0 * r2)
            total += rho_mk * x if k == m else 2.0 * (rho_mk * x).real
    return 2.0 / math.pi * total * env


def wigner(rho: DensityMatrix, x_axis=None, p_axis=None, method: str = "laguerre",
           pad: int = WIGNER_PAD, workers: int = 1) -> WignerGrid:
    """Wigner function W(beta) = (2/pi) Tr[D(beta)^dag rho D(beta) P], beta = x + i p.

    ``laguerre`` sums exact Fock-basis Wigner functions. ``displacement``
    builds D(beta) on the state zero-padded by ``pad`` levels and warns when
    the farthest grid point is not converged in the padding. Rows of the grid
    are independent and run on ``workers`` threads.
    """
    mat = _single_mode(rho)
    x_axis = default_axis() if x_axis is None else np.asarray(x_axis, dtype=float)
    p_axis = default_axis() if p_axis is None else np.asarray(p_axis, dtype=float)

    if method == "laguerre":
        def row(x):
            return _laguerre_block(mat, x + 1j * p_axis)
    elif method == "displacement":
        n = mat.shape[0]
        padded = np.zeros((n + pad, n + pad), dtype=complex)
        padded[:n, :n] = mat
        disp = _Displacer(n + pad)

        def row(x):
            return np.array([disp.wigner(padded, complex(x, p)) for p in p_axis])
    else:
        raise ValueError(f"unknown Wigner method {method!r}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, x_axis))
    else:
        rows = [row(x) for x in x_axis]
    values = np.array(rows)
    residue = float(np.max(np.abs(values.imag), initial=0.0))
    if residue > 1e-10:
        log.warning("Wigner function has imaginary residue %.2e", residue)
    if method == "displacement":
        _check_wigner_truncation(padded, disp, x_axis, p_axis, pad)
    return WignerGrid(x_axis, p_axis, values.real.copy())


def _check_wigner_truncation(padded, disp, x_axis, p_axis, pad):
    # compare the farthest corner against a run with extra padding
    n = padded.shape[0]
    extra = max(pad, WIGNER_PAD)
    beta = complex(x_axis[np.argmax(np.abs(x_axis))], p_axis[np.argmax(np.abs(p_axis))])
    wide = np.zeros((n + extra, n + extra), dtype=complex)
    wide[:n, :n] = padded
    ref = _Displacer(n + extra).wigner(wide, beta)
    err = abs(ref - disp.wigner(padded, beta))
    if err > 1e-6:
        warnings.warn(
            f"Wigner truncation error {err:.2e} at |beta|={abs(beta):.2f}; increase padding",
            TruncationWarning,
            stacklevel=3,
        )
    return err
