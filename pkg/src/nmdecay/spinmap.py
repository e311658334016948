"""Many-body XY spin chains and their Jordan-Wigner single-particle image.

The spin Hamiltonian is

    H = sum_n Omega_n S^z_n - sum_n (J_{n+1,n} / 2) (S^+_{n+1} S^-_n + h.c.)

Basis states are bit strings; bit ``n`` set means spin ``n`` points up.
The polarization correlation of an infinite-temperature XY chain reduces
to the propagator of a single up spin on the all-down background, which
is what :func:`spin_correlation` evolves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .dynamics import TimeSeries, diagonalize, site_populations
from .lattice import HamiltonianMatrix

__all__ = [
    "MAX_SPINS",
    "SpinChainError",
    "SpinChainSpec",
    "ManyBodyState",
    "xy_hamiltonian",
    "single_flip_state",
    "evolve",
    "spin_correlation",
    "jwt_hamiltonian",
    "single_particle_correlation",
    "one_magnon_block",
]

MAX_SPINS = 14


class SpinChainError(ValueError):
    pass


@dataclass(frozen=True)
class SpinChainSpec:
    """Open XY chain of ``m`` spins; scalar ``omega`` / ``j`` are broadcast."""

    m: int
    omega: tuple = 0.0
    j: tuple = 2.0
    i_site: int = 0
    f_site: int = 0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise SpinChainError(f"need m >= 2 spins, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        omega = np.broadcast_to(np.asarray(self.omega, dtype=float), (self.m,))
        j = np.broadcast_to(np.asarray(self.j, dtype=float), (self.m - 1,))
        if np.iscomplexobj(self.omega) or np.iscomplexobj(self.j):
            raise SpinChainError("fields and couplings must be real")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(j))):
            raise SpinChainError("fields and couplings must be finite")
        object.__setattr__(self, "omega", tuple(float(x) for x in omega))
        object.__setattr__(self, "j", tuple(float(x) for x in j))
        for name in ("i_site", "f_site"):
            k = getattr(self, name)
            if not 0 <= k < self.m:
                raise SpinChainError(f"{name}={k} outside 0..{self.m - 1}")


@dataclass(frozen=True)
class ManyBodyState:
    amplitudes: np.ndarray
    m: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def total_sz(self) -> float:
        """Expectation of sum_n S^z_n."""
        ups = _popcount(np.arange(self.amplitudes.size))
        return float(np.sum(np.abs(self.amplitudes) ** 2 * (ups - self.m / 2)))

    @property
    def sector(self) -> int:
        """Number of up spins, if the state lies in a single sector."""
        ups = _popcount(np.flatnonzero(np.abs(self.amplitudes) > 1e-12))
        if ups.size == 0 or np.any(ups != ups[0]):
            raise SpinChainError("state mixes several S^z sectors")
        return int(ups[0])

    def up_probability(self, site: int) -> float:
        mask = (np.arange(self.amplitudes.size) >> site) & 1
        return float(np.sum(np.abs(self.amplitudes[mask == 1]) ** 2))


def _popcount(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


def _check_size(m: int):
    if m > MAX_SPINS:
        raise SpinChainError(f"m={m} exceeds the 2^m state-vector limit m <= {MAX_SPINS}")


def xy_hamiltonian(spec: SpinChainSpec) -> sp.csr_matrix:
    """Sparse ``2^m x 2^m`` XY Hamiltonian."""
    _check_size(spec.m)
    dim = 1 << spec.m
    states = np.arange(dim)
    diag = np.zeros(dim)
    for n, om in enumerate(spec.omega):
        diag += om * (((states >> n) & 1) - 0.5)
    rows, cols, vals = [states], [states], [diag]
    for n, jn in enumerate(spec.j):
        bit_n = (states >> n) & 1
        bit_m = (states >> (n + 1)) & 1
        flip = states[bit_n != bit_m]
        rows.append(flip)
        cols.append(flip ^ ((1 << n) | (1 << (n + 1))))
        vals.append(np.full(flip.size, -0.5 * jn))
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dim, dim))
    return H.tocsr()


def single_flip_state(m: int, site: int) -> ManyBodyState:
    """All spins down except ``site``."""
    _check_size(m)
    psi = np.zeros(1 << m, dtype=complex)
    psi[1 << site] = 1.0
    return ManyBodyState(psi, m)


def evolve(H: sp.spmatrix, state: ManyBodyState, t):
    """Yield the state at each time of the non-decreasing grid ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(np.diff(t) < 0):
        raise SpinChainError("time grid must be non-decreasing")
    A = -1j * H.tocsc()
    psi, now = state.amplitudes, 0.0
    for tk in t:
        if tk != now:
            psi = expm_multiply(A * (tk - now), psi)
            now = tk
        yield ManyBodyState(psi, state.m)


def spin_correlation(spec: SpinChainSpec, t_grid) -> TimeSeries:
    """``P_{f,i}(t)`` from exact many-body evolution of one flipped spin."""
    H = xy_hamiltonian(spec)
    start = single_flip_state(spec.m, spec.i_site)
    target = 1 << spec.f_site
    p = np.array([abs(s.amplitudes[target]) ** 2 for s in evolve(H, start, t_grid)])
    kind = "SP" if spec.i_site == spec.f_site else "transfer"
    meta = {"case": "spin", "v0": "NA", "v": "NA", "m": spec.m,
            "i": spec.i_site, "f": spec.f_site}
    return TimeSeries(np.asarray(t_grid, dtype=float), p, kind, meta)


def jwt_hamiltonian(spec: SpinChainSpec) -> HamiltonianMatrix:
    """Single-fermion matrix: ``eps_n = Omega_n`` and hopping ``-J_{n+1,n}/2``."""
    m = spec.m
    H = np.diag(np.asarray(spec.omega))
    off = -0.5 * np.asarray(spec.j)
    H[np.arange(m - 1), np.arange(1, m)] = off
    H[np.arange(1, m), np.arange(m - 1)] = off
    labels = tuple(("sys", k) for k in range(m))
    return HamiltonianMatrix(H, labels, spec.i_site, tuple(range(m)))


def single_particle_correlation(spec: SpinChainSpec, t_grid) -> TimeSeries:
    """``|<f| exp(-i h t) |i>|^2`` from the Jordan-Wigner matrix."""
    h = jwt_hamiltonian(spec)
    pops = site_populations(diagonalize(h), spec.i_site, np.asarray(t_grid, dtype=float))
    kind = "SP" if spec.i_site == spec.f_site else "transfer"
    meta = {"case": "fermion", "v0": "NA", "v": "NA", "m": spec.m,
            "i": spec.i_site, "f": spec.f_site}
    return TimeSeries(np.asarray(t_grid, dtype=float), pops[spec.f_site], kind, meta)


def one_magnon_block(spec: SpinChainSpec) -> np.ndarray:
    """The many-body Hamiltonian restricted to the single-up-spin sector.

    Equals ``jwt_hamiltonian(spec).matrix - 0.5 * sum(Omega) * I``.
    """
    H = xy_hamiltonian(spec)
    idx = 1 << np.arange(spec.m)
    return H[idx][:, idx].toarray()
