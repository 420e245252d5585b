"""Finite-state ergodic Markov chain driving the noise regime.

Two equivalent simulators are kept deliberately: the interval/Poisson
construction (the chain as a jump integral against a Poisson random measure
on consecutive half-open intervals of length gamma_ij) because the dynamics
is built on it, and a Gillespie sampler as an independent oracle for
law-level cross checks.  The transition matrix exp(t Gamma) and the
stationary distribution provide exact references wherever closed forms
exist.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Generator",
    "IntervalTable",
    "ChainPath",
    "build_intervals",
    "h_jump",
    "simulate_chain_skorohod",
    "simulate_chain_gillespie",
    "transition_matrix",
    "stationary_distribution",
]


class ReducibleChainError(ValueError):
    """Raised when the positive-rate digraph is not strongly connected."""


@dataclass(frozen=True)
class Generator:
    """Rate matrix with gamma_ij >= 0 off the diagonal, rows summing to zero."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("generator must be a square matrix")
        off = g.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        diag = -off.sum(axis=1)
        if not np.allclose(np.diag(g), diag, rtol=0, atol=1e-12 * max(1.0, off.max(initial=0.0))):
            raise ValueError("diagonal must equal minus the off-diagonal row sum")
        fixed = off.copy()
        np.fill_diagonal(fixed, diag)
        object.__setattr__(self, "gamma", fixed)
        fixed.setflags(write=False)

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def from_rates(cls, rates) -> "Generator":
        """Build from off-diagonal rates; any supplied diagonal is recomputed."""
        g = np.asarray(rates, dtype=float).copy()
        np.fill_diagonal(g, 0.0)
        np.fill_diagonal(g, -g.sum(axis=1))
        return cls(g)

    def is_irreducible(self) -> bool:
        if self.m == 1:
            return True
        adj = csr_matrix((self.gamma > 0).astype(int))
        n, _ = connected_components(adj, directed=True, connection="strong")
        return n == 1

    def require_irreducible(self):
        if not self.is_irreducible():
            raise ReducibleChainError("positive-rate digraph is not strongly connected")


@dataclass(frozen=True)
class IntervalTable:
    """Consecutive half-open intervals [a_ij, b_ij), length gamma_ij.

    Rows are laid out in source order i = 0..m-1, targets j != i ascending,
    continuing where the previous row ended, so the table covers [0, L) with
    L the sum of all off-diagonal rates.
    """

    m: int
    sources: np.ndarray              # interval source state
    targets: np.ndarray              # interval target state
    starts: np.ndarray
    ends: np.ndarray

    @property
    def total_length(self) -> float:
        return float(self.ends[-1]) if len(self.ends) else 0.0

    def interval(self, i: int, j: int):
        for s, t, a, b in zip(self.sources, self.targets, self.starts, self.ends):
            if s == i and t == j:
                return float(a), float(b)
        raise KeyError(f"no interval for transition {i} -> {j}")


def build_intervals(g: Generator) -> IntervalTable:
    sources, targets, lengths = [], [], []
    for i in range(g.m):
        for j in range(g.m):
            if i != j and g.gamma[i, j] > 0.0:
                sources.append(i)
                targets.append(j)
                lengths.append(g.gamma[i, j])
    ends = np.cumsum(np.array(lengths))
    starts = ends - np.array(lengths)
    return IntervalTable(g.m, np.array(sources, dtype=int),
                         np.array(targets, dtype=int), starts, ends)


def h_jump(i: int, y: float, t: IntervalTable) -> int:
    """Displacement j - i when y lands in the source-i interval toward j, else 0."""
    hit = (t.sources == i) & (t.starts <= y) & (y < t.ends)
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return 0
    return int(t.targets[idx[0]] - i)


@dataclass(frozen=True)
class ChainPath:
    """Right-continuous step path: initial regime plus sorted jump records."""

    i0: int
    times: np.ndarray                # strictly increasing jump times
    states: np.ndarray               # post-jump regimes
    horizon: float

    def regime_at(self, t: float) -> int:
        """State at time t (right-continuous)."""
        k = bisect_right(self.times, t)
        return int(self.states[k - 1]) if k else self.i0

    def regime_before(self, t: float) -> int:
        """Left limit r(t-)."""
        k = bisect_right(self.times, t)
        if k and self.times[k - 1] == t:
            k -= 1
        return int(self.states[k - 1]) if k else self.i0

    def segments(self, a: float, b: float):
        """(start, end, regime) pieces covering [a, b] with constant regime."""
        cuts = [a] + [float(t) for t in self.times if a < t < b] + [b]
        return [(cuts[k], cuts[k + 1], self.regime_at(cuts[k]))
                for k in range(len(cuts) - 1)]

    def switch_times_in(self, a: float, b: float):
        return [float(t) for t in self.times if a < t < b]

    def occupation_fractions(self, m: int, T: float | None = None) -> np.ndarray:
        T = self.horizon if T is None else T
        frac = np.zeros(m)
        for a, b, i in self.segments(0.0, T):
            frac[i] += b - a
        return frac / T


def simulate_chain_skorohod(g: Generator, i0: int, T: float,
                            rng: np.random.Generator) -> ChainPath:
    """Drive the chain with a Poisson random measure on [0, T] x [0, L).

    Atoms arrive at rate L with uniform second coordinate; an atom moves the
    chain by the interval displacement of its source row and is discarded
    (thinned) otherwise.
    """
    g.require_irreducible()
    table = build_intervals(g)
    L = table.total_length
    times, states = [], []
    state = int(i0)
    if L > 0.0:
        n = int(rng.poisson(L * T))
        atom_t = np.sort(rng.random(n) * T)
        atom_y = rng.random(n) * L
        for t, y in zip(atom_t, atom_y):
            dh = h_jump(state, y, table)
            if dh != 0:
                state += dh
                times.append(float(t))
                states.append(state)
    return ChainPath(int(i0), np.array(times), np.array(states, dtype=int), T)


def simulate_chain_gillespie(g: Generator, i0: int, T: float,
                             rng: np.random.Generator) -> ChainPath:
    """Exponential holding times, target drawn with probability gamma_ij / -gamma_ii."""
    times, states = [], []
    state = int(i0)
    t = 0.0
    while True:
        rate = -g.gamma[state, state]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= T:
            break
        probs = g.gamma[state].copy()
        probs[state] = 0.0
        state = int(rng.choice(g.m, p=probs / rate))
        times.append(t)
        states.append(state)
    return ChainPath(int(i0), np.array(times), np.array(states, dtype=int), T)


def transition_matrix(g: Generator, t: float) -> np.ndarray:
    """exp(t Gamma) by scaling and squaring; rows checked stochastic."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    P = expm(t * g.gamma)
    if np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
        raise FloatingPointError("transition matrix rows failed the sum check")
    return np.clip(P, 0.0, 1.0)


def stationary_distribution(g: Generator) -> np.ndarray:
    """Solve pi Gamma = 0, sum pi = 1 for the irreducible chain."""
    g.require_irreducible()
    m = g.m
    A = np.vstack([g.gamma.T, np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = np.abs(pi @ g.gamma).max()
    if residual > 1e-12 * max(1.0, np.abs(g.gamma).max()):
        raise FloatingPointError(f"stationary solve residual {residual:.3e}")
    if np.any(pi <= 0):
        raise FloatingPointError("stationary distribution has nonpositive entries")
    return pi / pi.sum()
