"""Time evolution by exact diagonalization: survival probability and Loschmidt echo."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from .lattice import HamiltonianMatrix, SystemSpec, backward_hamiltonian, build_hamiltonian
from .spectral import SpectralError, bound_states, gf_poles, ldos_site_A

__all__ = [
    "DiagonalizationError",
    "QuadratureError",
    "Spectrum",
    "TimeSeries",
    "time_grid",
    "diagonalize",
    "return_amplitude",
    "site_populations",
    "survival_probability",
    "loschmidt_echo",
    "echo_amplitude",
    "sp_from_ldos",
    "DEFAULT_DT",
    "DEFAULT_T_MAX",
]

DEFAULT_DT = 0.05
DEFAULT_T_MAX = 40.0
_CHUNK = 256


class DiagonalizationError(ArithmeticError):
    pass


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def weights(self, site: int) -> np.ndarray:
        """``|<psi_k|site>|^2`` for every eigenstate."""
        return self.eigenvectors[site] ** 2


@dataclass
class TimeSeries:
    t: np.ndarray
    p: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def header(self) -> str:
        keys = {"case": self.meta.get("case", "NA"), "v0": self.meta.get("v0", "NA"),
                "v": self.meta.get("v", "NA")}
        parts = [f"{k}={_fmt(v)}" for k, v in keys.items()]
        extra = {k: v for k, v in sorted(self.meta.items()) if k not in ("case", "v0", "v")}
        parts.append(f"kind={self.kind}")
        parts += [f"{k}={_fmt(v)}" for k, v in extra.items()]
        return "# " + " ".join(parts)

    def to_csv(self, path) -> Path:
        path = Path(path)
        rows = "\n".join(f"{a:.15g},{b:.15g}" for a, b in zip(self.t, self.p))
        path.write_text(f"{self.header()}\nt,p\n{rows}\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        lines = Path(path).read_text().splitlines()
        meta = {}
        for token in lines[0].lstrip("# ").split():
            key, _, value = token.partition("=")
            meta[key] = _parse(value)
        kind = meta.pop("kind")
        data = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1], kind, meta)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.15g}"
    return str(value)


def _parse(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def time_grid(t_max: float, dt: float = DEFAULT_DT) -> np.ndarray:
    if dt <= 0 or t_max < 0:
        raise ValueError("need dt > 0 and t_max >= 0")
    n = int(round(t_max / dt))
    if not math.isclose(n * dt, t_max, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t_max={t_max} is not a multiple of dt={dt}")
    return dt * np.arange(n + 1)


# ---------------------------------------------------------------------------
# diagonalization


def _path_order(H: np.ndarray):
    """Site ordering along the chain if the hopping graph is a simple path."""
    n = H.shape[0]
    off = H.copy()
    np.fill_diagonal(off, 0.0)
    rows, cols = np.nonzero(off)
    if rows.size != 2 * (n - 1):
        return None
    degree = np.bincount(rows, minlength=n)
    if n > 1 and (degree.max() > 2 or np.count_nonzero(degree == 1) != 2):
        return None
    neighbours = [[] for _ in range(n)]
    for i, j in zip(rows, cols):
        neighbours[i].append(j)
    start = int(np.flatnonzero(degree == 1)[0]) if n > 1 else 0
    order, prev = [start], -1
    while len(order) < n:
        nxt = [j for j in neighbours[order[-1]] if j != prev]
        if not nxt:
            return None
        prev = order[-1]
        order.append(nxt[0])
    return np.asarray(order)


def diagonalize(H: HamiltonianMatrix | np.ndarray) -> Spectrum:
    """Full eigendecomposition of a real symmetric Hamiltonian.

    Open chains are handed to the tridiagonal MRRR solver after reordering
    along the path; everything else goes through LAPACK ``syevr``
    (Householder tridiagonalization + MRRR).
    """
    M = H.matrix if isinstance(H, HamiltonianMatrix) else np.asarray(H, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DiagonalizationError(f"expected a square matrix, got shape {M.shape}")
    if not np.array_equal(M, M.T):
        raise DiagonalizationError("Hamiltonian is not symmetric")
    order = _path_order(M)
    try:
        if order is not None and M.shape[0] > 2:
            d = M[order, order]
            e = M[order[:-1], order[1:]]
            w, vt = sla.eigh_tridiagonal(d, e)
            vecs = np.empty_like(vt)
            vecs[order] = vt
        else:
            w, vecs = sla.eigh(M, driver="evr", check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        off = M - np.diag(np.diag(M))
        raise DiagonalizationError(
            f"eigensolver failed for a {M.shape[0]}x{M.shape[0]} matrix "
            f"(off-diagonal Frobenius norm {np.linalg.norm(off):.3e}): {exc}") from exc
    return Spectrum(w, vecs)


# ---------------------------------------------------------------------------
# propagation


def _phases(w, t, sign=-1.0):
    arg = np.outer(w, t)
    return np.cos(arg), sign * np.sin(arg)


def return_amplitude(spectrum: Spectrum, site: int, t) -> np.ndarray:
    """``<site| exp(-i H t) |site>`` on the grid ``t``."""
    t = np.asarray(t, dtype=float)
    weights = spectrum.weights(site)
    amp = np.exp(-1j * np.outer(t, spectrum.eigenvalues)) @ weights
    amp[t == 0] = 1.0
    return amp


def _evolved(spectrum: Spectrum, site: int, t, sign=-1.0):
    """Columns ``exp(sign * i H t) |site>`` for each ``t`` (real and imaginary parts)."""
    V = spectrum.eigenvectors
    c = V[site]
    cos, sin = _phases(spectrum.eigenvalues, t, sign)
    return V @ (c[:, None] * cos), V @ (c[:, None] * sin)


def site_populations(spectrum: Spectrum, site: int, t) -> np.ndarray:
    """``P_{f,site}(t)`` for every site ``f`` (rows) and time (columns)."""
    re, im = _evolved(spectrum, site, np.asarray(t, dtype=float))
    return re ** 2 + im ** 2


def _sign_gauge(Hf: np.ndarray, Hb: np.ndarray):
    """Signs ``s`` with ``diag(s) Hf diag(s) == Hb``, or None if none exist."""
    if not np.array_equal(np.diag(Hf), np.diag(Hb)):
        return None
    if not np.array_equal(Hf != 0, Hb != 0):
        return None
    n = Hf.shape[0]
    rows, cols = np.nonzero(np.triu(Hf, 1))
    ratio = Hb[rows, cols] / Hf[rows, cols]
    if not np.all(np.abs(ratio) == 1.0):
        return None
    adj = [[] for _ in range(n)]
    for i, j, r in zip(rows, cols, ratio):
        adj[i].append((j, r))
        adj[j].append((i, r))
    signs = np.zeros(n)
    for root in range(n):
        if signs[root]:
            continue
        signs[root] = 1.0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j, r in adj[i]:
                want = signs[i] * r
                if signs[j] == 0:
                    signs[j] = want
                    queue.append(j)
                elif signs[j] != want:
                    return None
    return signs


def echo_amplitude(forward: Spectrum, backward: Spectrum | None, site: int, T,
                   signs: np.ndarray | None = None) -> np.ndarray:
    """``<site| exp(-i Hb T/2) exp(-i Hf T/2) |site>`` on the echo-time grid ``T``.

    With ``backward=None`` the backward Hamiltonian is taken to be
    ``diag(signs) Hf diag(signs)``, which lets one spectrum serve both stages.
    """
    T = np.asarray(T, dtype=float)
    half = T / 2.0
    out = np.empty(T.size, dtype=complex)
    for lo in range(0, T.size, _CHUNK):
        h = half[lo:lo + _CHUNK]
        fr, fi = _evolved(forward, site, h, -1.0)
        if backward is None:
            # exp(+iHb t)|site> = s_site * diag(s) conj(exp(-iHf t)|site>)
            phi2 = (fr + 1j * fi) ** 2
            out[lo:lo + _CHUNK] = signs[site] * (signs @ phi2)
        else:
            br, bi = _evolved(backward, site, h, +1.0)
            out[lo:lo + _CHUNK] = (np.sum(br * fr + bi * fi, axis=0)
                                   + 1j * np.sum(br * fi - bi * fr, axis=0))
    out[T == 0] = 1.0
    return out


def _meta(spec: SystemSpec) -> dict:
    return {"case": spec.case_id.value, "v0": spec.v0, "v": spec.v,
            "v_ab": spec.v_s if spec.case_id.value == "FiveSite" else spec.v_ab,
            "n_env": spec.n_env}


def survival_probability(spec: SystemSpec, t_max: float = DEFAULT_T_MAX,
                         dt: float = DEFAULT_DT, spectrum: Spectrum | None = None) -> TimeSeries:
    """``P_AA(t) = |<A|exp(-iHt)|A>|^2`` on ``[0, t_max]``."""
    t = time_grid(t_max, dt)
    H = build_hamiltonian(spec, t_max)
    if spectrum is None:
        spectrum = diagonalize(H)
    p = np.abs(return_amplitude(spectrum, H.initial, t)) ** 2
    return TimeSeries(t, p, "SP", _meta(H.spec))


def loschmidt_echo(spec: SystemSpec, T_max: float = DEFAULT_T_MAX,
                   dt: float = DEFAULT_DT) -> TimeSeries:
    """Local echo ``M(T)``: forward ``H`` for ``T/2`` then ``-H_S + H_E + H_SE`` for ``T/2``."""
    T = time_grid(T_max, dt)
    Hf = build_hamiltonian(spec, T_max)
    Hb = backward_hamiltonian(Hf.spec)
    fwd = diagonalize(Hf)
    signs = _sign_gauge(Hf.matrix, Hb.matrix)
    bwd = diagonalize(Hb) if signs is None else None
    m = np.abs(echo_amplitude(fwd, bwd, Hf.initial, T, signs)) ** 2
    return TimeSeries(T, m, "LE", _meta(Hf.spec))


# ---------------------------------------------------------------------------
# LDoS Fourier-transform oracle


def sp_from_ldos(spec: SystemSpec, t_max: float = DEFAULT_T_MAX, dt: float = DEFAULT_DT,
                 epsabs: float = 1e-10, norm_tol: float = 1e-6) -> TimeSeries:
    """Survival probability from the Fourier transform of the exact ``N_A``.

    Independent of any finite truncation: the integrand is the analytic
    infinite-environment LDoS, integrated over the band with the
    substitution ``eps = 2V cos(theta)`` and breakpoints at the resonances.
    Localized states outside the band enter through their residues.
    """
    t = time_grid(t_max, dt)
    v, e0 = spec.v, spec.e_env
    try:
        pole = gf_poles(spec.case_id, abs(spec.v_ab), spec.v0, v)
    except SpectralError as exc:
        raise QuadratureError(f"no analytic LDoS for case {spec.case_id.value}: {exc}") from exc
    peaks = {e0 + pole.delta0, e0 - pole.delta0}
    points = sorted(float(np.arccos(np.clip((p - e0) / (2 * v), -1, 1))) for p in peaks)
    points = [p for p in points if 0.0 < p < math.pi]
    nt = t.size

    def integrand(theta):
        eps = e0 + 2 * v * math.cos(theta)
        dens = float(ldos_site_A(eps, spec)) * 2 * v * math.sin(theta)
        out = np.empty(2 * nt + 1)
        out[:nt] = dens * np.cos(eps * t)
        out[nt:2 * nt] = -dens * np.sin(eps * t)
        out[-1] = dens
        return out

    res = integrate.quad_vec(integrand, 0.0, math.pi, points=points or None,
                             epsabs=epsabs, epsrel=1e-10, limit=20000, full_output=True)
    values, err, info = res
    if not info.success or err > 1e3 * epsabs:
        raise QuadratureError(
            f"LDoS quadrature failed near the band edges: status={info.status}, "
            f"error estimate={err:.3e}, intervals={info.intervals.shape[0]}")
    amp = values[:nt] + 1j * values[nt:2 * nt]
    norm = values[-1]
    for energy, weight in bound_states(spec):
        amp += weight * np.exp(-1j * energy * t)
        norm += weight
    if abs(norm - 1.0) > norm_tol:
        raise QuadratureError(
            f"LDoS plus localized weight integrates to {norm:.9f}, not 1")
    p = np.abs(amp) ** 2
    p[t == 0] = 1.0
    return TimeSeries(t, p, "SP", {"case": spec.case_id.value, "v0": spec.v0, "v": v,
                                   "source": "ldos"})
