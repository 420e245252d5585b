"""Regime-indexed Gaussian and jump noise with a computable bound certificate.

The Wiener part is an H-valued Q-Wiener increment: independent complex
Gaussians per conjugate mode pair with per-mode variance q(k) dt, Leray
projected so increments are divergence-free.  The projection is folded into
the normalization, so E |increment at mode k|^2 = q(k) dt holds exactly and
the Ito isometry Var(int sigma dW) = T sum_k sigma_i(k)^2 q(k) is exact.

Jumps form a compound Poisson process on a finite mark set: total rate
nu1(Z), i.i.d. marks proportional to their weights, jump vectors G(i, z)
looked up at the regime in force at the jump's left limit.  Every bound in
the hypotheses report is a finite sum of the input data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modes import (ModeSet, SpectralState, _check_incompressible, h_norm,
                    project_coeffs)

__all__ = [
    "QWienerSpec",
    "RegimeDiffusion",
    "JumpSpec",
    "HypothesesAReport",
    "verify_hypotheses_a",
    "sample_wiener_increment",
    "sample_jump_times",
]


@dataclass(frozen=True)
class QWienerSpec:
    """Per-mode covariance weights q(k) >= 0 of the trace-class operator Q."""

    modes: ModeSet
    q: np.ndarray                    # (dim,)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.modes.dimension,):
            raise ValueError("q must have one weight per retained mode")
        if np.any(q < 0):
            raise ValueError("covariance weights must be nonnegative")
        if np.any(q[self.modes.neg_index] != q):
            raise ValueError("covariance weights must satisfy q(k) = q(-k)")
        object.__setattr__(self, "q", q)
        q.setflags(write=False)

    @property
    def trace(self) -> float:
        return float(self.q.sum())

    @classmethod
    def from_shells(cls, modes: ModeSet, shells: dict) -> "QWienerSpec":
        """Weights constant on shells, given as {|k|^2: value}."""
        q = np.zeros(modes.dimension)
        for k2, val in shells.items():
            q[np.isclose(modes.k2, float(k2))] = float(val)
        return cls(modes, q)


@dataclass(frozen=True)
class RegimeDiffusion:
    """Diagonal-in-mode gains sigma_i(k), one row per regime.

    Gains are required symmetric under k <-> -k so that the mapped
    increments stay in the real space H.
    """

    modes: ModeSet
    sigma: np.ndarray                # (n_regimes, dim)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[1] != self.modes.dimension:
            raise ValueError("sigma must be (n_regimes, dim)")
        if np.any(s[:, self.modes.neg_index] != s):
            raise ValueError("gains must satisfy sigma_i(k) = sigma_i(-k)")
        object.__setattr__(self, "sigma", s)
        s.setflags(write=False)

    @property
    def n_regimes(self) -> int:
        return self.sigma.shape[0]

    def lq_norm_sq(self, q: QWienerSpec, regime: int) -> float:
        """||sigma(i)||_{L_Q}^2 = sum_k sigma_i(k)^2 q(k)."""
        return float(np.sum(self.sigma[regime] ** 2 * q.q))

    @classmethod
    def from_shells(cls, modes: ModeSet, per_regime_shells: list) -> "RegimeDiffusion":
        rows = []
        for shells in per_regime_shells:
            row = np.zeros(modes.dimension)
            for k2, val in shells.items():
                row[np.isclose(modes.k2, float(k2))] = float(val)
            rows.append(row)
        return cls(modes, np.array(rows))


@dataclass(frozen=True)
class JumpSpec:
    """Finite mark set with intensity weights and per-regime jump vectors."""

    modes: ModeSet
    labels: tuple                    # mark names, length J
    weights: np.ndarray              # nu1({z_j}) > 0, length J
    vectors: np.ndarray              # (n_regimes, J, dim, 3) complex

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        g = np.asarray(self.vectors, dtype=complex)
        if w.ndim != 1 or len(self.labels) != w.size:
            raise ValueError("one weight per mark required")
        if np.any(w <= 0) and w.size:
            raise ValueError("mark weights must be positive")
        if g.shape[1:] != (w.size, self.modes.dimension, 3):
            raise ValueError("vectors must be (n_regimes, J, dim, 3)")
        for i in range(g.shape[0]):
            for j in range(w.size):
                _check_incompressible(self.modes, g[i, j])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "vectors", g)
        w.setflags(write=False)
        g.setflags(write=False)

    @property
    def n_regimes(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_marks(self) -> int:
        return self.weights.size

    @property
    def total_rate(self) -> float:
        return float(self.weights.sum())

    def moment(self, regime: int, p: int) -> float:
        """int_Z |G(i, z)|^p nu1(dz) as an exact finite sum."""
        norms = np.sqrt(np.sum(np.abs(self.vectors[regime]) ** 2, axis=(1, 2)))
        return float(np.sum(self.weights * norms ** p))

    def compensator_rate(self, regime: int) -> np.ndarray:
        """sum_j G(i, z_j) nu1({z_j}) as raw coefficients."""
        if self.n_marks == 0:
            return np.zeros((self.modes.dimension, 3), dtype=complex)
        return np.einsum("j,jkc->kc", self.weights, self.vectors[regime])

    def g2_rate(self, regime: int) -> float:
        """sum_j |G(i, z_j)|^2 nu1({z_j}); the jump variance injection rate."""
        return self.moment(regime, 2)

    @classmethod
    def empty(cls, modes: ModeSet, n_regimes: int) -> "JumpSpec":
        return cls(modes, (), np.zeros(0),
                   np.zeros((n_regimes, 0, modes.dimension, 3), dtype=complex))


@dataclass(frozen=True)
class HypothesesAReport:
    """K = max over regimes of the diffusion and jump moment bounds."""

    K: float
    per_regime: tuple                # one dict per regime

    def as_table(self) -> list:
        rows = []
        for i, entry in enumerate(self.per_regime):
            rows.append({"regime": i, **entry})
        return rows


def verify_hypotheses_a(d: RegimeDiffusion, q: QWienerSpec,
                        j: JumpSpec) -> HypothesesAReport:
    """Exact evaluation of the noise bounds; K dominates every quantity.

    The p = 1 moment is computed and reported although no monitor consumes
    it; p = 2 and p = 4 feed the energy estimates.
    """
    if d.n_regimes != j.n_regimes:
        raise ValueError("diffusion and jump specs disagree on regime count")
    per_regime = []
    worst = 0.0
    for i in range(d.n_regimes):
        entry = {
            "sigma_lq2": d.lq_norm_sq(q, i),
            "jump_p1": j.moment(i, 1),
            "jump_p2": j.moment(i, 2),
            "jump_p4": j.moment(i, 4),
        }
        per_regime.append(entry)
        worst = max(worst, *entry.values())
    return HypothesesAReport(worst, tuple(per_regime))


def sample_wiener_coeffs(q: QWienerSpec, dt: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Raw coefficients of one Q-Wiener increment over a window of length dt.

    Per canonical mode pair, a complex Gaussian 3-vector with component
    variance q(k) dt / 2 is Leray projected (rank-2 projector), leaving
    E |increment(k)|^2 = q(k) dt exactly; the mirrored conjugate fills -k.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    modes = q.modes
    pos = modes.pos_index
    z = rng.standard_normal((len(pos), 3, 2))
    zeta = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(q.q[pos] * dt / 4.0)[:, None]
    zeta = np.einsum("kij,kj->ki", modes.projectors[pos], zeta)
    out = np.zeros((modes.dimension, 3), dtype=complex)
    out[pos] = zeta
    out[modes.neg_index[pos]] = np.conj(zeta)
    return out


def sample_wiener_increment(q: QWienerSpec, dt: float,
                            rng: np.random.Generator) -> SpectralState:
    return SpectralState(q.modes, sample_wiener_coeffs(q, dt, rng))


def sample_jump_times(j: JumpSpec, t0: float, dt: float,
                      rng: np.random.Generator):
    """Exact compound-Poisson event list on [t0, t0 + dt).

    Returns (times, mark_indices), times sorted.  Count is
    Poisson(nu1(Z) dt), marks i.i.d. proportional to their weights.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rate = j.total_rate
    if rate == 0.0:
        return np.zeros(0), np.zeros(0, dtype=int)
    n = int(rng.poisson(rate * dt))
    times = np.sort(t0 + dt * rng.random(n))
    marks = rng.choice(j.n_marks, size=n, p=j.weights / rate)
    return times, marks


def sample_jumps(j: JumpSpec, chain_path, t0: float, dt: float,
                 rng: np.random.Generator):
    """Jump events with resolved vectors plus the exact compensator integral.

    The vector for a jump at time t uses the regime in force at t- ; the
    compensator integrates sum_j G(r(s), z_j) nu1({z_j}) ds piecewise along
    the regime path, which is exact for a right-continuous step chain.
    """
    times, marks = sample_jump_times(j, t0, dt, rng)
    events = []
    for t, mk in zip(times, marks):
        regime = chain_path.regime_before(t)
        events.append((float(t), int(mk),
                       SpectralState(j.modes, j.vectors[regime, mk].copy())))
    comp = np.zeros((j.modes.dimension, 3), dtype=complex)
    for a, b, regime in chain_path.segments(t0, t0 + dt):
        comp += (b - a) * j.compensator_rate(regime)
    return events, SpectralState(j.modes, comp)
