"""Single-particle tight-binding Hamiltonians for the system + environment topologies.

Sign convention: every hopping enters with an explicit minus sign,
``H[i, j] = -t_ij``.  Energies are in units of the system hopping ``V_AB``
(hbar = 1), so times are in units of hbar / V_AB.

Site labels are tuples:

* ``("A",)``, ``("B",)``       -- the two system sites
* ``("sys", k)``               -- system site ``k`` of the five-site chain
* ``("env", nu, n)``           -- site ``n`` of environment chain ``nu``

System sites always come first in the matrix ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "Case",
    "LatticeError",
    "SystemSpec",
    "HamiltonianMatrix",
    "REFLECTION_MARGIN",
    "FIVE_SITE_COUNT",
    "min_n_env",
    "build_hamiltonian",
    "backward_hamiltonian",
    "isolated_chain",
]

#: safety factor on the ballistic front distance 2 V t_max
REFLECTION_MARGIN = 1.5
#: maximum V0 / V allowed by the weak-coupling guard
WEAK_COUPLING_RATIO = 0.5
FIVE_SITE_COUNT = 5


class LatticeError(ValueError):
    """Invalid system description or unsafe truncation."""


class Case(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"
    FIVE_SITE = "FiveSite"

    @classmethod
    def parse(cls, value: "Case | str") -> "Case":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for case in cls:
            if text == case.value or text.lower() == case.value.lower():
                return case
        if text.lower() in {"five", "five_site", "5", "fivesite"}:
            return cls.FIVE_SITE
        raise LatticeError(f"unknown case_id {value!r}; expected one of "
                           f"{[c.value for c in cls]}")

    @property
    def is_dimer(self) -> bool:
        return self in (Case.III, Case.IV, Case.V, Case.VI)

    @property
    def is_public(self) -> bool:
        """True when several system sites share one environment."""
        return self in (Case.VI, Case.FIVE_SITE)


def min_n_env(v: float, t_max: float, margin: float = REFLECTION_MARGIN) -> int:
    """Smallest chain truncation keeping reflections out of ``[0, t_max]``.

    The fastest wave in a chain with hopping ``v`` travels at ``2 v``.
    """
    return max(1, math.ceil(margin * 2.0 * abs(v) * t_max - 1e-9))


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of one topology.

    ``n_env`` is the truncation length per semi-infinite direction: a
    semi-infinite environment has ``n_env`` sites, an infinite one
    ``2 n_env + 1`` (``2 n_env`` for case VI, whose attachment sites
    -1 and +1 are nearest neighbours).  ``None`` means "size it from the
    simulation horizon", see :meth:`with_horizon`.
    """

    case_id: Case
    v_ab: float = 1.0
    v0: float = 0.1
    v: float = 1.0
    e_a: float = 0.0
    e_b: float = 0.0
    e_env: float = 0.0
    n_env: int | None = None
    v_s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "case_id", Case.parse(self.case_id))
        for name in ("v_ab", "v0", "v", "e_a", "e_b", "e_env", "v_s"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise LatticeError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.v0 <= 0:
            raise LatticeError(f"v0 must be positive, got {self.v0}")
        if self.v <= 0:
            raise LatticeError(f"v must be positive, got {self.v}")
        if self.v0 > WEAK_COUPLING_RATIO * self.v:
            raise LatticeError(
                f"weak-coupling guard violated: v0={self.v0} > "
                f"{WEAK_COUPLING_RATIO} * v={self.v}")
        if self.n_env is not None:
            if int(self.n_env) != self.n_env or self.n_env < 1:
                raise LatticeError(f"n_env must be a positive integer, got {self.n_env}")
            object.__setattr__(self, "n_env", int(self.n_env))
            half = FIVE_SITE_COUNT // 2
            if self.case_id is Case.FIVE_SITE and self.n_env < half:
                raise LatticeError(
                    f"the five-site system attaches to chain sites -{half}..{half}; "
                    f"need n_env >= {half}, got {self.n_env}")

    def with_horizon(self, t_max: float) -> "SystemSpec":
        """Return a spec whose truncation is safe up to ``t_max``.

        Auto-sizes ``n_env`` when unset; raises if a given ``n_env`` is too short.
        """
        if t_max < 0:
            raise LatticeError(f"t_max must be non-negative, got {t_max}")
        need = min_n_env(self.v, t_max)
        if self.n_env is None:
            return replace(self, n_env=need)
        if self.n_env < need:
            raise LatticeError(
                f"n_env={self.n_env} too small for horizon t_max={t_max}: reflections "
                f"from the chain end reach the system; need n_env >= {need}")
        return self

    def reversed(self) -> "SystemSpec":
        """This system with the system Hamiltonian negated (H_S -> -H_S)."""
        return replace(self, v_ab=-self.v_ab, e_a=-self.e_a, e_b=-self.e_b,
                       v_s=-self.v_s)

    @property
    def coupling_unit(self) -> float:
        """V0^2 / V, the natural unit of every decay rate."""
        return self.v0 ** 2 / self.v

    def as_dict(self) -> dict:
        return {
            "case_id": self.case_id.value,
            "v_ab": self.v_ab,
            "v0": self.v0,
            "v": self.v,
            "e_a": self.e_a,
            "e_b": self.e_b,
            "e_env": self.e_env,
            "n_env": self.n_env,
            "v_s": self.v_s,
        }


@dataclass(frozen=True)
class HamiltonianMatrix:
    matrix: np.ndarray
    labels: tuple
    initial: int
    system: tuple
    spec: SystemSpec | None = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.matrix.setflags(write=False)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def index(self, label) -> int:
        return self._index[tuple(label)]

    def edges(self) -> set:
        """Unordered pairs of labels joined by a nonzero off-diagonal entry."""
        rows, cols = np.nonzero(np.triu(self.matrix, 1))
        return {frozenset((self.labels[i], self.labels[j])) for i, j in zip(rows, cols)}


class _Builder:
    def __init__(self):
        self.labels = []
        self.onsite = []
        self.hops = []

    def site(self, label, energy):
        self.labels.append(label)
        self.onsite.append(energy)
        return len(self.labels) - 1

    def hop(self, i, j, t):
        self.hops.append((i, j, t))

    def chain(self, nu, ns, energy, v):
        idx = [self.site(("env", nu, n), energy) for n in ns]
        for a, b in zip(idx[:-1], idx[1:]):
            self.hop(a, b, v)
        return dict(zip(ns, idx))

    def matrix(self):
        H = np.diag(np.asarray(self.onsite, dtype=float))
        for i, j, t in self.hops:
            H[i, j] = H[j, i] = -t
        return H


def build_hamiltonian(spec: SystemSpec, t_max: float | None = None) -> HamiltonianMatrix:
    """Assemble the full single-particle Hamiltonian of ``spec``.

    When ``t_max`` is given the truncation is checked (or auto-sized)
    against the reflection-safe horizon.
    """
    if t_max is not None:
        spec = spec.with_horizon(t_max)
    if spec.n_env is None:
        raise LatticeError("n_env is unset; pass t_max to auto-size the environment")
    n = spec.n_env
    case = spec.case_id
    semi = list(range(1, n + 1))
    full = list(range(-n, n + 1))
    b = _Builder()

    if case is Case.FIVE_SITE:
        sys_idx = [b.site(("sys", k), 0.0) for k in range(FIVE_SITE_COUNT)]
        for k in range(FIVE_SITE_COUNT - 1):
            b.hop(sys_idx[k], sys_idx[k + 1], spec.v_s)
        half = FIVE_SITE_COUNT // 2
        chain = b.chain(1, full, spec.e_env, spec.v)
        for k in range(FIVE_SITE_COUNT):
            b.hop(sys_idx[k], chain[k - half], spec.v0)
        return HamiltonianMatrix(b.matrix(), tuple(b.labels), sys_idx[half],
                                 tuple(sys_idx), spec)

    a = b.site(("A",), spec.e_a)
    if case is Case.I:
        chain = b.chain(1, semi, spec.e_env, spec.v)
        b.hop(a, chain[1], spec.v0)
        system = (a,)
    elif case is Case.II:
        chain = b.chain(1, full, spec.e_env, spec.v)
        b.hop(a, chain[0], spec.v0)
        system = (a,)
    else:
        bb = b.site(("B",), spec.e_b)
        b.hop(a, bb, spec.v_ab)
        system = (a, bb)
        if case is Case.III:
            chain = b.chain(1, semi, spec.e_env, spec.v)
            b.hop(bb, chain[1], spec.v0)
        elif case is Case.IV:
            chain = b.chain(1, full, spec.e_env, spec.v)
            b.hop(bb, chain[0], spec.v0)
        elif case is Case.V:
            chain_a = b.chain(1, full, spec.e_env, spec.v)
            chain_b = b.chain(2, full, spec.e_env, spec.v)
            b.hop(a, chain_a[0], spec.v0)
            b.hop(bb, chain_b[0], spec.v0)
        elif case is Case.VI:
            chain = b.chain(1, [-k for k in semi[::-1]] + semi, spec.e_env, spec.v)
            b.hop(a, chain[-1], spec.v0)
            b.hop(bb, chain[1], spec.v0)
        else:  # pragma: no cover - Case.parse already rejected it
            raise LatticeError(f"unknown case_id {case!r}")
    return HamiltonianMatrix(b.matrix(), tuple(b.labels), a, system, spec)


def backward_hamiltonian(spec: SystemSpec, t_max: float | None = None) -> HamiltonianMatrix:
    """Hamiltonian of the time-reversal stage: ``-H_S + H_E + H_SE``.

    Only the system block changes sign; bath and system-bath entries are
    left untouched.
    """
    forward = build_hamiltonian(spec, t_max)
    H = np.array(forward.matrix)
    s = np.asarray(forward.system)
    H[np.ix_(s, s)] *= -1.0
    return HamiltonianMatrix(H, forward.labels, forward.initial, forward.system,
                             forward.spec)


def isolated_chain(n: int, v: float = 1.0, energy: float = 0.0) -> HamiltonianMatrix:
    """Open chain of ``n`` sites, a handy analytic fixture."""
    b = _Builder()
    b.chain(1, list(range(1, n + 1)), energy, v)
    return HamiltonianMatrix(b.matrix(), tuple(b.labels), 0, ())
