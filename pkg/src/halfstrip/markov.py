"""Linear algebra on the limiting label chain.

Everything here operates on a finite, irreducible, row-stochastic matrix Q
over an ordered label set: the stationary distribution pi, the centered
linear system

    d_i + sum_j (a_j - a_i) q_ij = 0,

whose solution (unique up to adding a constant) drives the drift-eliminating
change of coordinates, and the strict-inequality variant used to tune
Lyapunov corrections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
CENTERING_TOL = 1e-9

Label = int | str


class ReducibleMatrixError(ValueError):
    """The support digraph of the matrix is not strongly connected."""


class NonCenteredError(ValueError):
    """The pi-weighted mean of d is too far from zero; the linear system
    d + (Q - I) a = 0 has no solution."""


class WrongSignError(ValueError):
    """The pi-weighted mean of u does not have the sign the strict-drift
    construction requires."""


def _as_vector(values: Mapping[Label, float] | Sequence[float], labels: tuple) -> np.ndarray:
    """Coerce a label-keyed mapping (or an aligned sequence) to a float vector."""
    if isinstance(values, Mapping):
        missing = [k for k in labels if k not in values]
        if missing:
            raise KeyError(f"missing labels {missing!r}")
        return np.array([float(values[k]) for k in labels])
    vec = np.asarray(values, dtype=float)
    if vec.shape != (len(labels),):
        raise ValueError(f"expected {len(labels)} entries, got shape {vec.shape}")
    return vec


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic matrix with rows/columns indexed by an ordered label set.

    Row sums must equal 1 within ROW_SUM_TOL and entries must be
    non-negative. Irreducibility is *not* enforced at construction (use
    :func:`is_irreducible`); operations that require it check it themselves.
    """

    labels: tuple
    entries: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(labels) == 0:
            raise ValueError("label set must be non-empty")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels")
        entries = np.array(self.entries, dtype=float)
        n = len(labels)
        if entries.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got shape {entries.shape}")
        if entries.min() < -1e-15:
            raise ValueError(f"negative entry {entries.min()!r}")
        entries = np.clip(entries, 0.0, None)
        row_err = np.max(np.abs(entries.sum(axis=1) - 1.0))
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (max defect {row_err:.3e})")
        entries.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def prob(self, i, j) -> float:
        return float(self.entries[self.index(i), self.index(j)])


@dataclass(frozen=True)
class StationaryDistribution:
    """Strictly positive probability vector pi with pi Q = pi."""

    labels: tuple
    weights: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        weights = np.array(self.weights, dtype=float)
        if weights.shape != (len(labels),):
            raise ValueError("weights must align with labels")
        if weights.min() <= 0.0:
            raise ValueError("stationary weights must be strictly positive")
        if abs(weights.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("stationary weights must sum to 1")
        weights.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    def __getitem__(self, label) -> float:
        return float(self.weights[self.labels.index(label)])

    def as_dict(self) -> dict:
        return {k: float(w) for k, w in zip(self.labels, self.weights)}

    def mean(self, values: Mapping[Label, float] | Sequence[float]) -> float:
        """pi-weighted average of a per-label quantity."""
        return float(self.weights @ _as_vector(values, self.labels))


@dataclass(frozen=True)
class PoissonSolution:
    """Solution a of d + (Q - I) a = 0, shifted so that min_i a_i = 0.

    ``residual`` is the worst row defect max_i |d_i + sum_j (a_j - a_i) q_ij|.
    """

    labels: tuple
    values: np.ndarray
    residual: float

    def __post_init__(self):
        labels = tuple(self.labels)
        values = np.array(self.values, dtype=float)
        if values.shape != (len(labels),):
            raise ValueError("values must align with labels")
        values.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    def __getitem__(self, label) -> float:
        return float(self.values[self.labels.index(label)])

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in zip(self.labels, self.values)}


def is_irreducible(matrix: StochasticMatrix, support_tol: float = 1e-12) -> bool:
    """True iff the digraph of entries > support_tol is strongly connected."""
    adj = matrix.entries > support_tol

    def reachable(a: np.ndarray) -> np.ndarray:
        seen = np.zeros(a.shape[0], dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            new = a[frontier].any(axis=0) & ~seen
            seen |= new
            frontier = np.flatnonzero(new).tolist()
        return seen

    return bool(reachable(adj).all() and reachable(adj.T).all())


def stationary_distribution(matrix: StochasticMatrix) -> StationaryDistribution:
    """Unique stationary distribution of an irreducible stochastic matrix.

    Solves the singular system (Q^T - I) pi = 0 directly, with one equation
    replaced by the normalization sum_i pi_i = 1. No iteration is involved;
    the power-iteration route exists only as a test oracle.
    """
    if not is_irreducible(matrix):
        raise ReducibleMatrixError("matrix is reducible; no unique stationary distribution")
    n = matrix.size
    system = matrix.entries.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    weights = np.linalg.solve(system, rhs)
    if weights.min() <= 0.0:
        raise ArithmeticError("solver returned a non-positive stationary weight")
    weights /= weights.sum()
    defect = float(np.max(np.abs(weights @ matrix.entries - weights)))
    if defect > 1e-10:
        raise ArithmeticError(f"stationary defect {defect:.3e} exceeds 1e-10")
    return StationaryDistribution(matrix.labels, weights)


def solve_poisson(
    matrix: StochasticMatrix,
    d: Mapping[Label, float] | Sequence[float],
    tol: float = CENTERING_TOL,
    pi: StationaryDistribution | None = None,
) -> PoissonSolution:
    """Solve d + (Q - I) a = 0 for the representative with min_i a_i = 0.

    Solvability requires sum_i pi_i d_i = 0; inputs whose pi-weighted mean
    exceeds ``tol`` in absolute value raise :class:`NonCenteredError` (the
    model then sits in the constant-drift regime, not the centered one).

    The singular solve replaces the row with the largest pi weight (the one
    best implied by the others) by the pin a_k = 0, then shifts to the
    min-zero representative.
    """
    if pi is None:
        pi = stationary_distribution(matrix)
    dvec = _as_vector(d, matrix.labels)
    mean = float(pi.weights @ dvec)
    if abs(mean) > tol:
        raise NonCenteredError(
            f"pi-weighted mean of d is {mean:.6e} (tolerance {tol:.1e}); "
            "the centered system is not solvable"
        )
    n = matrix.size
    pinned = int(np.argmax(pi.weights))
    system = matrix.entries - np.eye(n)
    system[pinned, :] = 0.0
    system[pinned, pinned] = 1.0
    rhs = -dvec.copy()
    rhs[pinned] = 0.0
    a = np.linalg.solve(system, rhs)
    a -= a.min()
    residual = float(np.max(np.abs(dvec + matrix.entries @ a - a)))
    return PoissonSolution(matrix.labels, a, residual)


def solve_strict_drift(
    matrix: StochasticMatrix,
    u: Mapping[Label, float] | Sequence[float],
    direction: str,
    pi: StationaryDistribution | None = None,
) -> dict:
    """Find b with u_i + sum_j (b_j - b_i) q_ij < 0 for every i (direction
    ``"negative"``), or > 0 for every i (``"positive"``).

    Construction: with eps = |sum_i pi_i u_i| and eps_i = eps / (|S| pi_i),
    the shifted vector u_i (+/-) eps_i is exactly centered, and the solution
    of the centered system realizes each inequality with margin eps_i.
    """
    if direction not in ("negative", "positive"):
        raise ValueError("direction must be 'negative' or 'positive'")
    if pi is None:
        pi = stationary_distribution(matrix)
    uvec = _as_vector(u, matrix.labels)
    mean = float(pi.weights @ uvec)
    if direction == "negative" and not mean < 0.0:
        raise WrongSignError(f"need sum pi_i u_i < 0, got {mean:.6e}")
    if direction == "positive" and not mean > 0.0:
        raise WrongSignError(f"need sum pi_i u_i > 0, got {mean:.6e}")
    eps = abs(mean)
    eps_vec = eps / (matrix.size * pi.weights)
    shift = eps_vec if direction == "negative" else -eps_vec
    scale = max(1.0, float(np.max(np.abs(uvec))))
    solution = solve_poisson(matrix, uvec + shift, tol=1e-9 * scale, pi=pi)
    b = solution.values
    slack = uvec + matrix.entries @ b - b
    if direction == "negative" and not np.all(slack < 0.0):
        raise ArithmeticError(f"strict inequality not achieved: slack {slack}")
    if direction == "positive" and not np.all(slack > 0.0):
        raise ArithmeticError(f"strict inequality not achieved: slack {slack}")
    return {k: float(v) for k, v in zip(matrix.labels, b)}
