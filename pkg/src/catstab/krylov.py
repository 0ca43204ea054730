"""Krylov-subspace approximations of exp(t L) v for sparse generators.

Two variants:

* ``KrylovPropagator`` - polynomial Arnoldi with adaptive sub-steps and the
  a-posteriori error estimate of Sidje's Expokit. Step size scales like
  m / ||L||, so it suits mildly stiff generators.
* ``ShiftInvertPropagator`` - rational Arnoldi on (I - gamma L)^{-1}. One
  sparse LU per step length; convergence no longer depends on ||L||, which
  is what the cross-Kerr three-mode model needs.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IntegrationError

_BREAKDOWN = 1e-12
_TINY = 1e-300
_MAX_GROWTH = 10.0


def _round_step(h):
    if not (h > 0 and math.isfinite(h)):
        raise IntegrationError(f"Krylov step-size estimate is not a positive number ({h})")
    s = 10.0 ** (math.floor(math.log10(h)) - 1)
    return math.ceil(h / s) * s


class KrylovPropagator:
    def __init__(self, matrix, m: int = 30, tol: float = 1e-8, max_reject: int = 20):
        self.matrix = matrix
        self.n = matrix.shape[0]
        self.m = min(m, self.n)
        self.tol = tol
        self.max_reject = max_reject
        if sp.issparse(matrix):
            self.anorm = float(spla.norm(matrix, np.inf))
        else:
            self.anorm = float(np.linalg.norm(matrix, np.inf))
        self.steps_taken = 0

    def propagate(self, v, t: float, post_step=None):
        """exp(t A) v, with ``post_step`` applied to each accepted sub-step."""
        v = np.asarray(v, dtype=complex)
        if t == 0:
            return v.copy()
        if self.anorm == 0:
            return v.copy()
        m, tol, anorm = self.m, self.tol, self.anorm
        w = v.copy()
        beta = np.linalg.norm(w)
        if beta == 0:
            return w
        t_out = abs(t)
        sgn = 1.0 if t > 0 else -1.0
        fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
        t_new = (1.0 / anorm) * ((fact * tol) / (4.0 * beta * anorm)) ** (1.0 / m)
        t_new = _round_step(t_new)
        t_now = 0.0
        gamma, delta = 0.9, 1.2

        V = np.zeros((m + 1, self.n), dtype=complex)
        while t_now < t_out:
            t_step = min(t_out - t_now, t_new)
            H = np.zeros((m + 2, m + 2), dtype=complex)
            V[0] = w / beta
            k1, mb = 2, m
            for j in range(m):
                p = self.matrix @ V[j]
                for i in range(j + 1):
                    H[i, j] = np.vdot(V[i], p)
                    p = p - H[i, j] * V[i]
                s = np.linalg.norm(p)
                if s < _BREAKDOWN:
                    # invariant subspace found: the whole remaining interval is exact
                    k1, mb = 0, j + 1
                    t_step = t_out - t_now
                    break
                H[j + 1, j] = s
                V[j + 1] = p / s
            avnorm = 0.0
            if k1 != 0:
                H[m + 1, m] = 1.0
                avnorm = np.linalg.norm(self.matrix @ V[m])
            xm = 1.0 / m
            for reject in range(self.max_reject + 1):
                mx = mb + k1
                F = scipy.linalg.expm(sgn * t_step * H[:mx, :mx])
                if k1 == 0:
                    err_loc = _BREAKDOWN
                    break
                phi1 = abs(beta * F[m, 0])
                phi2 = abs(beta * F[m + 1, 0] * avnorm)
                if phi1 > 10.0 * phi2:
                    err_loc, xm = phi2, 1.0 / m
                elif phi1 > phi2:
                    err_loc, xm = phi1 * phi2 / (phi1 - phi2), 1.0 / m
                else:
                    err_loc, xm = phi1, 1.0 / (m - 1)
                if err_loc <= delta * t_step * tol:
                    break
                t_step = _round_step(gamma * t_step * (t_step * tol / err_loc) ** xm)
            else:
                raise IntegrationError(
                    f"Krylov step rejected {self.max_reject} times", t_reached=sgn * t_now
                )
            mx = mb + max(0, k1 - 1)
            w = (beta * F[:mx, 0]) @ V[:mx]
            if post_step is not None:
                w = post_step(w)
            beta = np.linalg.norm(w)
            t_now += t_step
            self.steps_taken += 1
            # a round-off floor on err_loc would shrink every step once t_step * tol
            # nears it, so only guard against zero and cap the growth instead
            err_loc = max(err_loc, _TINY)
            t_new = _round_step(gamma * t_step * min((t_step * tol / err_loc) ** xm, _MAX_GROWTH))
            if beta == 0:
                break
        return w


class ShiftInvertPropagator:
    """Rational Krylov exp(t L) v with a cached LU of (I - gamma L) per step length.

    The pole is placed at gamma = t / ``pole_ratio``; the Krylov basis grows
    until successive approximations differ by less than ``tol`` relative to
    ||v||. Steps that do not converge within ``max_dim`` vectors are halved.
    """

    def __init__(self, matrix, tol: float = 1e-8, max_dim: int = 40, pole_ratio: float = 10.0,
                 min_dim: int = 4):
        self.matrix = sp.csc_matrix(matrix)
        self.n = matrix.shape[0]
        self.tol = tol
        self.max_dim = min(max_dim, self.n)
        self.min_dim = min(min_dim, self.max_dim)
        self.pole_ratio = pole_ratio
        self._lu_cache: dict[float, object] = {}
        self.steps_taken = 0

    def _solver(self, gamma):
        key = float(f"{gamma:.12e}")
        lu = self._lu_cache.get(key)
        if lu is None:
            eye = sp.identity(self.n, dtype=complex, format="csc")
            lu = spla.splu((eye - gamma * self.matrix).tocsc())
            self._lu_cache[key] = lu
        return lu

    def _step(self, v, t):
        beta = np.linalg.norm(v)
        if beta == 0:
            return v.copy(), True
        gamma = t / self.pole_ratio
        lu = self._solver(gamma)
        m = self.max_dim
        V = np.zeros((m + 1, self.n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        V[0] = v / beta
        prev = None
        for j in range(m):
            p = lu.solve(V[j])
            # two passes of Gram-Schmidt; the rational basis loses orthogonality fast
            for _ in range(2):
                for i in range(j + 1):
                    c = np.vdot(V[i], p)
                    H[i, j] += c
                    p = p - c * V[i]
            s = np.linalg.norm(p)
            k = j + 1
            Hk = H[:k, :k]
            try:
                Lk = (np.eye(k) - np.linalg.inv(Hk)) / gamma
            except np.linalg.LinAlgError:
                return None, False
            y = scipy.linalg.expm(t * Lk)[:, 0]
            done = s < _BREAKDOWN
            if prev is not None and k >= self.min_dim:
                diff = np.linalg.norm(y[: k - 1] - prev) + abs(y[k - 1])
                if diff <= self.tol:
                    done = True
            if done:
                return beta * (y @ V[:k]), True
            prev = y
            H[j + 1, j] = s
            V[j + 1] = p / s
        return None, False

    def propagate(self, v, t: float, post_step=None, _depth: int = 0):
        v = np.asarray(v, dtype=complex)
        if t == 0:
            return v.copy()
        w, ok = self._step(v, t)
        if ok:
            self.steps_taken += 1
            return post_step(w) if post_step is not None else w
        if _depth > 12:
            raise IntegrationError("shift-invert Krylov failed to converge", t_reached=0.0)
        half = 0.5 * t
        w = self.propagate(v, half, post_step, _depth + 1)
        try:
            return self.propagate(w, half, post_step, _depth + 1)
        except IntegrationError as exc:
            raise IntegrationError(str(exc), t_reached=half + (exc.t_reached or 0.0)) from exc
