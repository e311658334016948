"""Analytic layer: chain Green's functions, self-energies, LDoS, poles and rates.

All Green's functions here are *retarded* and written so that a single
expression serves two purposes:

* for ``Im z >= 0`` (and real ``z`` inside the band, approached from above)
  it is the physical retarded function;
* for ``Im z < 0`` near the band it is the analytic continuation through the
  band onto the second sheet, which is where the decaying poles live.

This works because the band enters only through ``sqrt(V**2 - z**2 / 4)``
taken on the principal branch, whose cut maps to real ``|z| > 2V``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, NamedTuple

import numpy as np
from scipy import integrate, optimize

from .lattice import Case, HamiltonianMatrix, LatticeError, SystemSpec

__all__ = [
    "SpectralError",
    "PoleSearchError",
    "surface_gf",
    "bulk_gf",
    "self_energy",
    "SelfEnergy",
    "ldos_surface",
    "ldos_bulk",
    "LdosCurve",
    "ldos_curve",
    "band_integral",
    "greens_aa",
    "inverse_greens_aa",
    "public_block_gf",
    "ldos_site_A",
    "bound_states",
    "PolePrediction",
    "gf_poles",
    "scfgr_rate",
    "wba_rate",
    "le_rate_prediction",
    "SymmetrizedPublic",
    "symmetrize_public",
    "poles_to_json",
]

Direction = Literal["forward", "backward"]
POLE_TOL = 1e-12
POLE_MAX_ITER = 200
RESIDUAL_TOL = 1e-10


class SpectralError(ValueError):
    pass


class PoleSearchError(SpectralError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# isolated-chain Green's functions and self-energies


def _band_root(z, v, e_env):
    w = np.asarray(z, dtype=complex) - e_env
    return w, np.sqrt(v * v - w * w / 4.0)


def surface_gf(z, v: float, e_env: float = 0.0):
    """Green's function at the end site of a semi-infinite chain."""
    w, root = _band_root(z, v, e_env)
    return (w / 2.0 - 1j * root) / v ** 2


def bulk_gf(z, v: float, e_env: float = 0.0):
    """Green's function at any site of an infinite chain."""
    _, root = _band_root(z, v, e_env)
    return -0.5j / root


def self_energy(eps, v0: float, v: float, kind: str = "surface"):
    """Self-energy ``V0**2 * g(eps)`` of a site coupled to a chain.

    ``kind="surface"`` couples to the end of a semi-infinite chain,
    ``kind="bulk"`` to a site of an infinite chain.  Only the in-band
    branch ``|eps| <= 2v`` is supported; there ``Im < 0``.
    """
    eps = np.asarray(eps, dtype=float)
    if v0 <= 0 or v <= 0:
        raise SpectralError("v0 and v must be positive")
    edge = 2.0 * v
    if np.any(np.abs(eps) > edge * (1 + 1e-14)):
        raise SpectralError(f"energy outside the band |eps| <= {edge}: localized "
                            "modes are not modelled")
    if kind == "surface":
        out = v0 ** 2 * surface_gf(eps, v)
    elif kind == "bulk":
        if np.any(np.abs(eps) >= edge):
            raise SpectralError("bulk self-energy diverges at the band edge |eps| = 2v")
        out = v0 ** 2 * bulk_gf(eps, v)
    else:
        raise SpectralError(f"unknown kind {kind!r}")
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class SelfEnergy:
    """``Sigma = delta - 1j * gamma`` as a pair of real functions of energy."""

    v0: float
    v: float
    kind: str = "surface"

    def __call__(self, eps):
        return self_energy(eps, self.v0, self.v, self.kind)

    def delta(self, eps):
        return np.real(self(eps))

    def gamma(self, eps):
        return -np.imag(self(eps))


# ---------------------------------------------------------------------------
# local densities of states


def ldos_surface(eps, v: float):
    eps = np.asarray(eps, dtype=float)
    arg = np.clip(v * v - eps * eps / 4.0, 0.0, None)
    out = np.where(np.abs(eps) < 2 * v, np.sqrt(arg) / (np.pi * v * v), 0.0)
    return out[()] if out.ndim == 0 else out


def ldos_bulk(eps, v: float):
    eps = np.asarray(eps, dtype=float)
    if np.any(np.abs(eps) == 2 * v):
        raise SpectralError("bulk LDoS has a van Hove singularity at |eps| = 2v")
    inside = np.abs(eps) < 2 * v
    arg = np.where(inside, v * v - eps * eps / 4.0, 1.0)
    out = np.where(inside, 0.5 / (np.pi * np.sqrt(arg)), 0.0)
    return out[()] if out.ndim == 0 else out


def band_integral(func: Callable, v: float, e_env: float = 0.0,
                  peaks=(), epsabs: float = 1e-11) -> float:
    """Integrate ``func`` over the band ``[e_env - 2v, e_env + 2v]``.

    Substituting ``eps = e_env + 2 v cos(theta)`` absorbs the inverse
    square-root edges of bulk-type densities; ``peaks`` are energies of
    sharp features handed to the adaptive rule as breakpoints.
    """
    def integrand(theta):
        return float(func(e_env + 2 * v * math.cos(theta))) * 2 * v * math.sin(theta)

    points = sorted({float(np.arccos(np.clip((p - e_env) / (2 * v), -1, 1)))
                     for p in peaks} - {0.0, math.pi})
    value, err = integrate.quad(integrand, 0.0, math.pi, points=points or None,
                                limit=2000, epsabs=epsabs, epsrel=1e-12)
    if err > 1e3 * epsabs:
        raise SpectralError(f"band quadrature did not converge (error estimate {err:.2e})")
    return value


@dataclass(frozen=True)
class LdosCurve:
    grid: np.ndarray
    values: np.ndarray
    kind: str
    v: float = 1.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = [f"# kind={self.kind} v={self.v:.15g}", "energy,density"]
        lines += [f"{e:.15g},{d:.15g}" for e, d in zip(self.grid, self.values)]
        path.write_text("\n".join(lines) + "\n")
        return path


def ldos_curve(kind: str, v: float = 1.0, num: int = 401,
               spec: SystemSpec | None = None) -> LdosCurve:
    """Sample an LDoS on an open Chebyshev-like grid (edges excluded)."""
    theta = (np.arange(num) + 0.5) * np.pi / num
    e_env = spec.e_env if spec is not None else 0.0
    grid = np.sort(e_env + 2 * v * np.cos(theta))
    if kind == "surface":
        values = ldos_surface(grid - e_env, v)
    elif kind == "bulk":
        values = ldos_bulk(grid - e_env, v)
    elif kind == "site_A":
        if spec is None:
            raise SpectralError("site_A LDoS needs a SystemSpec")
        v = spec.v
        values = ldos_site_A(grid, spec)
    else:
        raise SpectralError(f"unknown LDoS kind {kind!r}")
    return LdosCurve(grid, np.asarray(values), kind, v)


# ---------------------------------------------------------------------------
# exact local Green's function at site A


def public_block_gf(z, spec: SystemSpec, parity: int):
    """Green's function of one decoupled chain of the public (case VI) model.

    ``parity=+1`` is the symmetric chain (|A>+|B>, |n>+|-n>), ``-1`` the
    antisymmetric one.  Each is a semi-infinite chain whose first two
    site energies are shifted by the dimer and by the bond between the
    attachment sites.
    """
    if spec.e_a != spec.e_b:
        raise SpectralError("symmetrization needs e_a == e_b")
    z = np.asarray(z, dtype=complex)
    dimer = spec.e_a - parity * spec.v_ab
    first = spec.e_env - parity * spec.v
    g_first = 1.0 / (z - first - spec.v ** 2 * surface_gf(z, spec.v, spec.e_env))
    return 1.0 / (z - dimer - spec.v0 ** 2 * g_first)


def greens_aa(z, spec: SystemSpec):
    """``G_AA(z)`` for cases I-VI, built from continued fractions."""
    z = np.asarray(z, dtype=complex)
    case = spec.case_id
    v0sq = spec.v0 ** 2
    if case in (Case.I, Case.III):
        sigma = v0sq * surface_gf(z, spec.v, spec.e_env)
    elif case in (Case.II, Case.IV, Case.V):
        sigma = v0sq * bulk_gf(z, spec.v, spec.e_env)
    if case in (Case.I, Case.II):
        return 1.0 / (z - spec.e_a - sigma)
    if case in (Case.III, Case.IV):
        return 1.0 / (z - spec.e_a - spec.v_ab ** 2 / (z - spec.e_b - sigma))
    if case is Case.V:
        return 1.0 / (z - spec.e_a - sigma - spec.v_ab ** 2 / (z - spec.e_b - sigma))
    if case is Case.VI:
        return 0.5 * (public_block_gf(z, spec, +1) + public_block_gf(z, spec, -1))
    raise SpectralError(f"no closed-form Green's function for case {case.value}")


def _block_inverse(z, spec: SystemSpec, parity: int):
    dimer = spec.e_a - parity * spec.v_ab
    first = spec.e_env - parity * spec.v
    g_first = 1.0 / (z - first - spec.v ** 2 * surface_gf(z, spec.v, spec.e_env))
    return z - dimer - spec.v0 ** 2 * g_first


def inverse_greens_aa(z, spec: SystemSpec):
    """``1 / G_AA(z)``, finite at the poles of ``G_AA``."""
    z = np.asarray(z, dtype=complex)
    case = spec.case_id
    v0sq = spec.v0 ** 2
    if case in (Case.I, Case.III):
        sigma = v0sq * surface_gf(z, spec.v, spec.e_env)
    elif case in (Case.II, Case.IV, Case.V):
        sigma = v0sq * bulk_gf(z, spec.v, spec.e_env)
    if case in (Case.I, Case.II):
        return z - spec.e_a - sigma
    if case in (Case.III, Case.IV):
        return z - spec.e_a - spec.v_ab ** 2 / (z - spec.e_b - sigma)
    if case is Case.V:
        return z - spec.e_a - sigma - spec.v_ab ** 2 / (z - spec.e_b - sigma)
    if case is Case.VI:
        if spec.e_a != spec.e_b:
            raise SpectralError("symmetrization needs e_a == e_b")
        inv_s, inv_a = _block_inverse(z, spec, +1), _block_inverse(z, spec, -1)
        return 2.0 * inv_s * inv_a / (inv_s + inv_a)
    raise SpectralError(f"no closed-form Green's function for case {case.value}")


def ldos_site_A(eps, spec: SystemSpec):
    """``N_A(eps) = -Im G_AA(eps + i0) / pi`` inside the band."""
    eps = np.asarray(eps, dtype=float)
    w = np.abs(eps - spec.e_env)
    if np.any(w > 2 * spec.v):
        raise SpectralError("N_A requested outside the band; bound states are not modelled")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.imag(greens_aa(eps, spec)) / np.pi
    if not np.all(np.isfinite(out)):
        raise SpectralError("N_A evaluated on a band-edge singularity")
    return out[()] if out.ndim == 0 else out


def bound_states(spec: SystemSpec, tol: float = 1e-12):
    """Real poles of ``G_AA`` outside the band and their residues.

    Returns ``[(energy, weight), ...]``; the weights are the parts of
    ``|A>`` carried by localized states, which the continuum LDoS misses.
    """
    v, e0 = spec.v, spec.e_env
    # just above the real axis the principal sqrt picks the decaying branch
    eta = 1e-200j

    def inv_g(e):
        return float(np.real(inverse_greens_aa(e + eta, spec)))

    reach = 4.0 * (abs(spec.e_a) + abs(spec.e_b) + abs(spec.v_ab) + spec.v0 + v)
    offsets = 2 * v + reach * np.geomspace(1e-12, 1.0, 400)
    found = []
    for side in (1.0, -1.0):
        grid = e0 + side * offsets
        vals = np.array([inv_g(e) for e in grid])
        for k in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:])):
            a, b = sorted((grid[k], grid[k + 1]))
            root = optimize.brentq(inv_g, a, b, xtol=tol * v, rtol=1e-15)
            if abs(inv_g(root)) > 1e-8 * v:
                continue  # a sign flip through a pole of 1/G, not a root
            h = 1e-6 * max(v, abs(root - e0) - 2 * v)
            slope = (inv_g(root + h) - inv_g(root - h)) / (2 * h)
            found.append((float(root), float(1.0 / slope)))
    return sorted(found)


# ---------------------------------------------------------------------------
# poles


@dataclass(frozen=True)
class PolePrediction:
    case_id: Case
    direction: str
    delta0: float
    gamma0: float
    rate: float
    order: str
    residual: float = 0.0
    v0: float = 0.1
    v: float = 1.0

    @property
    def normalized_rate(self) -> float:
        """Rate in units of V0^2 / (hbar V)."""
        return self.rate / (self.v0 ** 2 / self.v)

    def to_record(self) -> dict:
        return {
            "case": self.case_id.value,
            "direction": self.direction,
            "delta0": self.delta0,
            "gamma0": self.gamma0,
            "rate": self.rate,
            "order": self.order,
        }


def _direction_sign(direction: str) -> int:
    if direction == "forward":
        return 1
    if direction == "backward":
        return -1
    raise SpectralError(f"direction must be 'forward' or 'backward', got {direction!r}")


def _newton(f, z0: complex, scale: float, label: str) -> complex:
    z = complex(z0)
    h = 1e-7 * scale
    step = math.inf
    for _ in range(POLE_MAX_ITER):
        fz = complex(f(z))
        deriv = (complex(f(z + h)) - complex(f(z - h))) / (2 * h)
        if deriv == 0 or not np.isfinite(deriv):
            break
        step = fz / deriv
        z -= step
        if abs(step) <= POLE_TOL * scale:
            return z
    raise PoleSearchError(
        f"pole search for {label} did not converge after {POLE_MAX_ITER} iterations: "
        f"seed={z0:.6g}, last z={z:.12g}, last step={abs(step):.3e}, "
        f"|f(z)|={abs(complex(f(z))):.3e}")


def _case_iii_pole(v_ab, v0, v) -> complex:
    """Closed-form pole of the dimer on a semi-infinite chain."""
    root = np.sqrt(complex((v_ab ** 2 + v0 ** 2) ** 2 - 4 * v_ab ** 2 * v ** 2))
    base = v_ab ** 2 * (2 * v ** 2 - v0 ** 2) - v0 ** 4
    spec = SystemSpec(Case.III, v_ab=v_ab, v0=v0, v=v)
    candidates = []
    for sign in (1, -1):
        z = np.sqrt((base + sign * v0 ** 2 * root) / (2 * (v ** 2 - v0 ** 2)))
        z = complex(abs(z.real), -abs(z.imag))
        candidates.append((abs(inverse_greens_aa(z, spec)), z))
    return min(candidates, key=lambda c: c[0])[1]


def gf_poles(case: Case | str, v_ab: float = 1.0, v0: float = 0.1, v: float = 1.0,
             direction: Direction = "forward") -> PolePrediction:
    """Decaying pole ``Delta0 - i Gamma0`` of ``G_AA`` (the one with ``Delta0 >= 0``).

    Cases I-III use their closed forms; IV-VI are refined by complex Newton
    iteration on the continued ``1/G`` seeded by the second-order estimate.
    ``direction="backward"`` evaluates the reversed system (``v_ab -> -v_ab``).
    """
    try:
        spec = SystemSpec(case, v_ab=_direction_sign(direction) * v_ab, v0=v0, v=v)
    except LatticeError as exc:
        raise SpectralError(str(exc)) from exc
    case = spec.case_id
    w = spec.v_ab
    if case.is_dimer and not 0 < abs(w) < 2 * v:
        raise SpectralError("dimer levels must lie strictly inside the band (0 < |v_ab| < 2v)")

    if case is Case.I:
        z = -1j * v0 ** 2 / math.sqrt(v ** 2 - v0 ** 2)
    elif case is Case.II:
        z = -1j * math.sqrt(2 * v ** 2 * (math.sqrt(v0 ** 4 / (4 * v ** 4) + 1) - 1))
    elif case is Case.III:
        z = _case_iii_pole(w, v0, v)
    elif case in (Case.IV, Case.V):
        share = 0.5 if case is Case.IV else 1.0
        seed = abs(w) + share * v0 ** 2 * complex(bulk_gf(abs(w), v))
        z = _newton(lambda x: inverse_greens_aa(x, spec), seed, v, f"case {case.value}")
    elif case is Case.VI:
        # the block whose dimer level sits at +|v_ab|
        parity = -1 if w > 0 else 1
        first = -parity * v
        g_first = 1.0 / (abs(w) - first - v ** 2 * complex(surface_gf(abs(w), v)))
        seed = abs(w) + v0 ** 2 * g_first
        z = _newton(lambda x: _block_inverse(x, spec, parity), seed, v,
                    f"case VI ({direction})")
    else:
        raise SpectralError(f"no pole analysis for case {case.value}")

    residual = float(abs(inverse_greens_aa(z, spec)))
    if residual > RESIDUAL_TOL * v:
        raise PoleSearchError(f"pole residual {residual:.3e} exceeds {RESIDUAL_TOL * v:.1e} "
                              f"for case {case.value} ({direction})")
    gamma0 = -z.imag
    if gamma0 < 0:
        raise PoleSearchError(f"pole {z} lies on the physical sheet (Gamma0 < 0)")
    return PolePrediction(case, direction, abs(z.real), gamma0, 2.0 * gamma0, "exact",
                          residual, v0, v)


# ---------------------------------------------------------------------------
# rates in units of V0^2 / (hbar V)


def scfgr_rate(case: Case | str, v_ab: float = 1.0, v: float = 1.0,
               direction: Direction = "forward") -> float:
    """Second-order (in V0) decay rate ``2 Gamma0`` from the pole expansions."""
    case = Case.parse(case)
    w = _direction_sign(direction) * v_ab
    if case is Case.I:
        return 2.0
    if case is Case.II:
        return 1.0
    if not 0 < abs(w) < 2 * v:
        raise SpectralError("dimer levels must lie strictly inside the band (0 < |v_ab| < 2v)")
    root = math.sqrt(4 * v ** 2 - w ** 2)
    if case is Case.III:
        return 0.5 * root / v
    if case is Case.IV:
        return v / root
    if case is Case.V:
        return 2 * v / root
    if case is Case.VI:
        return root / (2 * v - w)
    raise SpectralError(f"no closed-form rate for case {case.value}")


# fraction of the system's weight sitting on environment-coupled sites
_COUPLED_FRACTION = {
    Case.I: 1.0, Case.II: 1.0, Case.III: 0.5, Case.IV: 0.5,
    Case.V: 1.0, Case.VI: 1.0, Case.FIVE_SITE: 1.0,
}
_SURFACE_CASES = {Case.I, Case.III}


def wba_rate(case: Case | str, v: float = 1.0) -> float:
    """Golden-rule rate ``2 pi V0^2 N_1(0)`` with the per-case coupled fraction."""
    case = Case.parse(case)
    n1 = ldos_surface(0.0, v) if case in _SURFACE_CASES else ldos_bulk(0.0, v)
    return 2 * math.pi * v * float(n1) * _COUPLED_FRACTION[case]


def le_rate_prediction(case: Case | str, v_ab: float = 1.0, v: float = 1.0) -> float:
    """Echo rate as the mean of the forward and backward decay rates."""
    return 0.5 * (scfgr_rate(case, v_ab, v, "forward")
                  + scfgr_rate(case, v_ab, v, "backward"))


# ---------------------------------------------------------------------------
# public-bath symmetrization


class SymmetrizedPublic(NamedTuple):
    symmetric: HamiltonianMatrix
    antisymmetric: HamiltonianMatrix
    transform: np.ndarray


def symmetrize_public(H: HamiltonianMatrix) -> SymmetrizedPublic:
    """Split the case-VI Hamiltonian into two decoupled semi-infinite chains.

    Returns both chains (ordered dimer state, 1, 2, ...) and the orthogonal
    matrix ``U`` whose columns are the new basis, so that ``U.T @ H @ U`` is
    block diagonal.
    """
    if H.spec is None or H.spec.case_id is not Case.VI:
        raise SpectralError("symmetrize_public expects a case VI Hamiltonian")
    if H.spec.e_a != H.spec.e_b:
        raise SpectralError("symmetrization needs e_a == e_b")
    n = H.spec.n_env
    r = 1 / math.sqrt(2)
    U = np.zeros((H.dim, H.dim))
    col = 0
    blocks = []
    for parity, tag in ((1, "S"), (-1, "A")):
        start = col
        labels = [(f"AB_{tag}",)]
        U[H.index(("A",)), col] = r
        U[H.index(("B",)), col] = parity * r
        col += 1
        for k in range(1, n + 1):
            # |k_S> = (|k> + |-k>)/sqrt2, |k_A> = (|k> - |-k>)/sqrt2
            U[H.index(("env", 1, k)), col] = r
            U[H.index(("env", 1, -k)), col] = parity * r
            labels.append((f"env_{tag}", k))
            col += 1
        blocks.append((slice(start, col), tuple(labels)))
    Hp = U.T @ H.matrix @ U
    out = [HamiltonianMatrix(np.array(Hp[s, s]), labels, 0, (0,), None)
           for s, labels in blocks]
    return SymmetrizedPublic(out[0], out[1], U)


def poles_to_json(predictions, path=None) -> str:
    text = json.dumps([p.to_record() for p in predictions], indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
