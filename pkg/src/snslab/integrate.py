"""Pathwise time stepping for the regularized switching dynamics.

Scheme per substep [a, b] of length h (regime i constant by construction):

    u~   = E u(a) + h phi1 * [ -B_eps(u(a), u(a)) + f - c(i) ]
    u(b-) = u~ + sigma_i . dW(h)
    u(b)  = u(b-) + G(i, z)            (when a jump lands on b)

with E = exp(-nu |k|^2 h) exact on the linear part, phi1 = (1 - E)/(nu
|k|^2 h), and c(i) the jump compensator drift.  Substeps are cut so every
chain switch and every jump time is a boundary, which keeps the left-limit
semantics of the jump coefficient exact.

The energy ledger mirrors the Ito identity for |u|^2 term by term.  Time
integrals of ||u||^2, <f, u> and the compensator cross term are evaluated
in closed form along the scheme's own exponential interpolant, and the
Wiener quadratic-variation entry is the realized sum |sigma dW|^2 (its
compensator integral is recorded separately).  With those choices the
ledger residual vanishes to roundoff whenever the nonlinearity is off and
scales O(dt) pathwise otherwise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .chain import (ChainPath, Generator, build_intervals, h_jump,
                    simulate_chain_skorohod)
from .mollifier import MollifierSpec
from .modes import (ModeSet, SpectralState, _check_incompressible,
                    _symmetrize, project_coeffs, v_dual_norm)
from .noise import (JumpSpec, QWienerSpec, RegimeDiffusion,
                    HypothesesAReport, sample_jump_times,
                    sample_wiener_coeffs, verify_hypotheses_a)
from .nonlinear import NonlinearityEngine
from .rng import stream

__all__ = [
    "DynamicsSpec",
    "StepperConfig",
    "PathRecord",
    "BlowUpError",
    "step",
    "simulate_path",
    "simulate_coupled_pair",
    "energy_ledger_residual",
    "self_convergence_errors",
]


class BlowUpError(RuntimeError):
    """Nonfinite state encountered; carries the time of first failure."""

    def __init__(self, t: float):
        super().__init__(f"state became nonfinite at t={t:.6g}")
        self.t = t


class SubstepBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DynamicsSpec:
    """Everything that defines one realization law of the dynamics."""

    modes: ModeSet
    nu: float
    forcing: SpectralState
    mollifier: MollifierSpec
    qwiener: QWienerSpec
    diffusion: RegimeDiffusion
    jumps: JumpSpec
    chain: Generator
    include_nonlinearity: bool = True
    nonlinearity_method: str = "auto"

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        _check_incompressible(self.modes, self.forcing.coeffs)
        if not (self.diffusion.n_regimes == self.jumps.n_regimes == self.chain.m):
            raise ValueError("regime counts disagree between noise and chain")

    @cached_property
    def engine(self) -> NonlinearityEngine:
        return NonlinearityEngine(self.modes, self.nonlinearity_method)

    @cached_property
    def forcing_dual_sq(self) -> float:
        """F = ||f||_{V'}^2, the mean-square dual forcing level."""
        return v_dual_norm(self.forcing) ** 2

    @cached_property
    def hypotheses_report(self) -> HypothesesAReport:
        return verify_hypotheses_a(self.diffusion, self.qwiener, self.jumps)

    @cached_property
    def K(self) -> float:
        return self.hypotheses_report.K

    @cached_property
    def lambda1(self) -> float:
        return float(self.modes.k2.min())

    @cached_property
    def K_crit(self) -> float:
        """Stability threshold (nu^3 lambda1 - F/nu) / 2."""
        return (self.nu ** 3 * self.lambda1 - self.forcing_dual_sq / self.nu) / 2.0


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    substep_budget: int = 64
    n_checkpoints: int = 33

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substep_budget < 1:
            raise ValueError("substep budget must be >= 1")


@dataclass
class PathRecord:
    """Scalar series on the base grid plus states at checkpoint times."""

    t: np.ndarray
    h2: np.ndarray
    v2: np.ndarray
    regime: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    int_v2: np.ndarray               # int_0^t ||u||^2 ds (interpolant-exact)
    int_f_dual: np.ndarray           # int_0^t ||f||_{V'}^2 ds
    forcing_work: np.ndarray         # 2 int <f, u> ds
    sigma_qv: np.ndarray             # realized sum |sigma dW|^2
    sigma_trace: np.ndarray          # int ||sigma(r)||_{LQ}^2 ds
    jump_realized: np.ndarray        # sum over jumps of |u + G|^2 - |u|^2
    jump_cross: np.ndarray           # int <u, compensator rate> ds
    g2nu: np.ndarray                 # int sum_j |G|^2 nu1 ds
    jumps: list                      # (t, mark, regime_before, dh2)
    chain_path: ChainPath
    checkpoint_times: np.ndarray
    checkpoint_states: list          # SpectralState or None
    feature_names: tuple = ()
    feature_series: np.ndarray | None = None
    blown_up: bool = False
    blowup_time: float | None = None
    transcript: dict = field(default_factory=dict)
    seed_info: tuple = ()

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def viscous(self) -> np.ndarray:
        return 2.0 * self._nu_cache * self.int_v2

    _nu_cache: float = 0.0


def energy_ledger_residual(p: PathRecord) -> np.ndarray:
    """Discrete residual of the Ito energy identity along the record."""
    lhs = p.h2 + 2.0 * p._nu_cache * p.int_v2
    rhs = (p.h2[0] + p.forcing_work + p.sigma_qv + 2.0 * p.m1
           + p.jump_realized - 2.0 * p.jump_cross)
    return lhs - rhs


class _Accumulators:
    __slots__ = ("m1", "m2", "int_v2", "forcing_work", "sigma_qv",
                 "sigma_trace", "jump_realized", "jump_cross", "g2nu")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, 0.0)


def _flow_with_integrals(ucoef, drift, c, h):
    """Exponential flow over one substep plus exact interpolant integrals.

    Returns (u_end, int_interp, int_v2_inc) where int_interp is the
    componentwise integral of the interpolant and int_v2_inc the integral
    of its V-norm squared.
    """
    E = np.exp(-c * h)
    one_minus_E = -np.expm1(-c * h)
    beta = drift / c[:, None]
    diff = ucoef - beta
    u_end = beta + diff * E[:, None]
    int_interp = beta * h + diff * (one_minus_E / c)[:, None]
    one_minus_E2 = -np.expm1(-2.0 * c * h)
    sq = (np.sum(np.abs(beta) ** 2, axis=1) * h
          + 2.0 * np.real(np.einsum("kc,kc->k", np.conj(beta), diff)) * one_minus_E / c
          + np.sum(np.abs(diff) ** 2, axis=1) * one_minus_E2 / (2.0 * c))
    return u_end, int_interp, sq


class _Stepper:
    """Shared machinery between single paths, coupled pairs and refinements."""

    def __init__(self, spec: DynamicsSpec, cfg: StepperConfig):
        self.spec = spec
        self.cfg = cfg
        self.c = spec.nu * spec.modes.k2
        self.k2 = spec.modes.k2
        self.fcoef = spec.forcing.coeffs
        self.mult = (spec.mollifier.per_mode
                     if spec.mollifier.epsilon > 0.0 else None)
        self.comp_rates = [spec.jumps.compensator_rate(i)
                           for i in range(spec.chain.m)]
        self.g2_rates = [spec.jumps.g2_rate(i) for i in range(spec.chain.m)]
        self.sigma_lq2 = [spec.diffusion.lq_norm_sq(spec.qwiener, i)
                          for i in range(spec.chain.m)]

    def drift(self, ucoef, regime):
        d = self.fcoef - self.comp_rates[regime]
        if self.spec.include_nonlinearity:
            d = d - self.spec.engine.inertial_coeffs(ucoef, ucoef, self.mult)
        return d

    def substep(self, ucoef, regime, h, dW, acc: _Accumulators):
        """Advance one substep; dW already scaled to window length h."""
        drift = self.drift(ucoef, regime)
        u_end, int_interp, int_sq = _flow_with_integrals(ucoef, drift, self.c, h)
        acc.int_v2 += float(np.sum(self.k2 * int_sq))
        acc.forcing_work += 2.0 * float(np.real(np.sum(self.fcoef * np.conj(int_interp))))
        acc.jump_cross += float(np.real(np.sum(self.comp_rates[regime]
                                               * np.conj(int_interp))))
        acc.g2nu += self.g2_rates[regime] * h
        acc.sigma_trace += self.sigma_lq2[regime] * h

        inc = self.spec.diffusion.sigma[regime][:, None] * dW
        m1_inc = float(np.real(np.sum(inc * np.conj(u_end))))
        acc.m1 += m1_inc
        acc.sigma_qv += float(np.sum(np.abs(inc) ** 2))
        u_end = u_end + inc
        # m2 compensator piece: 2 int <u, c(i)> + int sum |G|^2 nu1
        acc.m2 -= 2.0 * float(np.real(np.sum(self.comp_rates[regime]
                                             * np.conj(int_interp))))
        acc.m2 -= self.g2_rates[regime] * h
        return u_end

    def apply_jump(self, ucoef, regime_before, mark, acc: _Accumulators):
        g = self.spec.jumps.vectors[regime_before, mark]
        dh2 = float(2.0 * np.real(np.sum(ucoef * np.conj(g))) + np.sum(np.abs(g) ** 2))
        acc.jump_realized += dh2
        acc.m2 += dh2
        return ucoef + g, dh2


def step(u: SpectralState, regime: int, dt: float, spec: DynamicsSpec,
         rng: np.random.Generator, jump_mark: int | None = None) -> SpectralState:
    """One substep with constant regime; draws its own Wiener increment.

    Raises BlowUpError on a nonfinite result.
    """
    stepper = _Stepper(spec, StepperConfig(dt=dt))
    acc = _Accumulators()
    dW = sample_wiener_coeffs(spec.qwiener, dt, rng)
    out = stepper.substep(u.coeffs, regime, dt, dW, acc)
    if jump_mark is not None:
        out, _ = stepper.apply_jump(out, regime, jump_mark, acc)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(dt)
    out = _symmetrize(spec.modes, project_coeffs(spec.modes, out))
    return SpectralState(spec.modes, out)


def _base_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("horizon must be an integer multiple of dt")
    return np.arange(n + 1) * dt


def _checkpoint_indices(n_steps: int, n_checkpoints: int) -> np.ndarray:
    k = min(n_checkpoints, n_steps + 1)
    return np.unique(np.round(np.linspace(0, n_steps, k)).astype(int))


class _Recorder:
    def __init__(self, spec, cfg, grid, chain_path, features, store_states):
        n = len(grid)
        self.spec = spec
        self.grid = grid
        self.chain_path = chain_path
        self.h2 = np.zeros(n)
        self.v2 = np.zeros(n)
        self.regime = np.zeros(n, dtype=int)
        self.series = {name: np.zeros(n) for name in
                       ("m1", "m2", "int_v2", "forcing_work", "sigma_qv",
                        "sigma_trace", "jump_realized", "jump_cross", "g2nu")}
        self.jump_log = []
        self.check_idx = _checkpoint_indices(n - 1, cfg.n_checkpoints)
        self.check_set = set(int(i) for i in self.check_idx)
        self.store_states = store_states
        self.states = []
        self.features = tuple(features or ())
        self.feat = (np.zeros((len(self.check_idx), len(self.features)))
                     if self.features else None)
        self._ck = 0
        self.n_checkpointed = 0

    def record(self, idx, ucoef, acc):
        self.h2[idx] = float(np.sum(np.abs(ucoef) ** 2))
        self.v2[idx] = float(np.sum(self.spec.modes.k2[:, None] * np.abs(ucoef) ** 2))
        self.regime[idx] = self.chain_path.regime_at(self.grid[idx])
        for name in self.series:
            self.series[name][idx] = getattr(acc, name)
        if idx in self.check_set:
            state = SpectralState(self.spec.modes, ucoef.copy())
            if self.store_states:
                self.states.append(state)
            else:
                self.states.append(None)
            if self.feat is not None:
                from .observables import FEATURES
                for col, name in enumerate(self.features):
                    self.feat[self._ck, col] = FEATURES[name](state)
            self._ck += 1
            self.n_checkpointed += 1

    def finish(self, spec, nu, chain_path, transcript, seed_info,
               blown_up=False, blowup_time=None, upto=None):
        sl = slice(None) if upto is None else slice(0, upto + 1)
        kept = self.check_idx[:self.n_checkpointed]
        rec = PathRecord(
            t=self.grid[sl], h2=self.h2[sl], v2=self.v2[sl],
            regime=self.regime[sl], m1=self.series["m1"][sl],
            m2=self.series["m2"][sl], int_v2=self.series["int_v2"][sl],
            int_f_dual=spec.forcing_dual_sq * self.grid[sl],
            forcing_work=self.series["forcing_work"][sl],
            sigma_qv=self.series["sigma_qv"][sl],
            sigma_trace=self.series["sigma_trace"][sl],
            jump_realized=self.series["jump_realized"][sl],
            jump_cross=self.series["jump_cross"][sl],
            g2nu=self.series["g2nu"][sl],
            jumps=self.jump_log, chain_path=chain_path,
            checkpoint_times=self.grid[kept],
            checkpoint_states=self.states,
            feature_names=self.features,
            feature_series=None if self.feat is None else self.feat[:self.n_checkpointed],
            blown_up=blown_up, blowup_time=blowup_time,
            transcript=transcript, seed_info=seed_info)
        rec._nu_cache = nu
        return rec


def _cuts_for_step(a, b, chain_paths, jump_times, budget):
    cuts = {a, b}
    for cp in chain_paths:
        cuts.update(cp.switch_times_in(a, b))
    cuts.update(float(t) for t in jump_times if a < t < b)
    ordered = sorted(cuts)
    if len(ordered) - 1 > budget:
        raise SubstepBudgetError(
            f"step [{a:.4g}, {b:.4g}] needs {len(ordered) - 1} substeps "
            f"(budget {budget})")
    return ordered


def simulate_path(spec: DynamicsSpec, cfg: StepperConfig, u0: SpectralState,
                  i0: int, T: float, master_seed: int, path_index: int = 0,
                  *, label: str = "path", store_states: bool = True,
                  features=None) -> PathRecord:
    """Full path with ledgers; bit-reproducible given (seed, index, label).

    A blow-up truncates the record at the last finite base time and sets
    the flag rather than raising.
    """
    chain_rng = stream(master_seed, label, path_index, "chain")
    jump_rng = stream(master_seed, label, path_index, "jumps")
    wiener_rng = stream(master_seed, label, path_index, "wiener")

    chain_path = simulate_chain_skorohod(spec.chain, i0, T, chain_rng)
    jtimes, jmarks = sample_jump_times(spec.jumps, 0.0, T, jump_rng)
    grid = _base_grid(T, cfg.dt)
    stepper = _Stepper(spec, cfg)
    rec = _Recorder(spec, cfg, grid, chain_path, features, store_states)
    acc = _Accumulators()
    digest = hashlib.sha256()

    ucoef = u0.copy_coeffs()
    rec.record(0, ucoef, acc)
    jmap = {}
    for t, mk in zip(jtimes, jmarks):
        jmap.setdefault(float(t), []).append(int(mk))

    for n in range(len(grid) - 1):
        cuts = _cuts_for_step(grid[n], grid[n + 1], [chain_path], jtimes,
                              cfg.substep_budget)
        for a, b in zip(cuts[:-1], cuts[1:]):
            regime = chain_path.regime_at(a)
            dW = sample_wiener_coeffs(spec.qwiener, b - a, wiener_rng)
            digest.update(dW.tobytes())
            ucoef = stepper.substep(ucoef, regime, b - a, dW, acc)
            for mk in jmap.get(b, ()):
                rbefore = chain_path.regime_before(b)
                ucoef, dh2 = stepper.apply_jump(ucoef, rbefore, mk, acc)
                rec.jump_log.append((b, mk, rbefore, dh2))
        if not np.all(np.isfinite(ucoef)):
            return rec.finish(spec, spec.nu, chain_path,
                              _transcript(digest, chain_path, jtimes),
                              (master_seed, path_index, label),
                              blown_up=True, blowup_time=grid[n + 1], upto=n)
        # keep the invariants exact against slow roundoff drift
        ucoef = _symmetrize(spec.modes, project_coeffs(spec.modes, ucoef))
        rec.record(n + 1, ucoef, acc)

    return rec.finish(spec, spec.nu, chain_path,
                      _transcript(digest, chain_path, jtimes),
                      (master_seed, path_index, label))


def _transcript(digest, chain_path, jtimes):
    return {
        "wiener_sha256": digest.hexdigest(),
        "chain_jumps": int(len(chain_path.times)),
        "n1_jumps": int(len(jtimes)),
    }


def simulate_coupled_pair(spec: DynamicsSpec, cfg: StepperConfig,
                          u0_a: SpectralState, u0_b: SpectralState,
                          i0_a: int, i0_b: int, T: float, master_seed: int,
                          path_index: int = 0, *, label: str = "pair",
                          store_states: bool = False, features=None):
    """Two paths under one noise realization (synchronous coupling).

    The legs share the chain-driving atoms, the jump events and the Wiener
    increments; both are advanced on the union of their substep grids so the
    consumed randomness is identical, and only the initial data differ.
    Returns (record_a, record_b).
    """
    chain_rng = stream(master_seed, label, path_index, "chain")
    jump_rng = stream(master_seed, label, path_index, "jumps")
    wiener_rng = stream(master_seed, label, path_index, "wiener")

    # one atom stream, two chains
    spec.chain.require_irreducible()
    table = build_intervals(spec.chain)
    L = table.total_length
    atoms_t = np.zeros(0)
    atoms_y = np.zeros(0)
    if L > 0:
        n = int(chain_rng.poisson(L * T))
        atoms_t = np.sort(chain_rng.random(n) * T)
        atoms_y = chain_rng.random(n) * L
    paths = []
    for i0 in (i0_a, i0_b):
        state = int(i0)
        times, states = [], []
        for t, y in zip(atoms_t, atoms_y):
            dh = h_jump(state, y, table)
            if dh != 0:
                state += dh
                times.append(float(t))
                states.append(state)
        paths.append(ChainPath(int(i0), np.array(times),
                               np.array(states, dtype=int), T))
    chain_a, chain_b = paths

    jtimes, jmarks = sample_jump_times(spec.jumps, 0.0, T, jump_rng)
    jmap = {}
    for t, mk in zip(jtimes, jmarks):
        jmap.setdefault(float(t), []).append(int(mk))

    grid = _base_grid(T, cfg.dt)
    stepper = _Stepper(spec, cfg)
    recs = [
        _Recorder(spec, cfg, grid, chain_a, features, store_states),
        _Recorder(spec, cfg, grid, chain_b, features, store_states),
    ]
    accs = [_Accumulators(), _Accumulators()]
    digest = hashlib.sha256()
    coeffs = [u0_a.copy_coeffs(), u0_b.copy_coeffs()]
    chains = [chain_a, chain_b]
    for leg in (0, 1):
        recs[leg].record(0, coeffs[leg], accs[leg])

    blown = [False, False]
    blow_time = [None, None]
    last_ok = [0, 0]
    for n in range(len(grid) - 1):
        cuts = _cuts_for_step(grid[n], grid[n + 1], chains, jtimes,
                              cfg.substep_budget)
        for a, b in zip(cuts[:-1], cuts[1:]):
            dW = sample_wiener_coeffs(spec.qwiener, b - a, wiener_rng)
            digest.update(dW.tobytes())
            for leg in (0, 1):
                if blown[leg]:
                    continue
                regime = chains[leg].regime_at(a)
                coeffs[leg] = stepper.substep(coeffs[leg], regime, b - a,
                                              dW, accs[leg])
                for mk in jmap.get(b, ()):
                    rbefore = chains[leg].regime_before(b)
                    coeffs[leg], dh2 = stepper.apply_jump(coeffs[leg], rbefore,
                                                          mk, accs[leg])
                    recs[leg].jump_log.append((b, mk, rbefore, dh2))
        for leg in (0, 1):
            if not blown[leg]:
                if not np.all(np.isfinite(coeffs[leg])):
                    blown[leg] = True
                    blow_time[leg] = float(grid[n + 1])
                else:
                    coeffs[leg] = _symmetrize(spec.modes,
                                              project_coeffs(spec.modes, coeffs[leg]))
                    recs[leg].record(n + 1, coeffs[leg], accs[leg])
                    last_ok[leg] = n + 1

    transcript = _transcript(digest, chain_a, jtimes)
    out = []
    for leg, chain in zip((0, 1), chains):
        out.append(recs[leg].finish(spec, spec.nu, chain, dict(transcript),
                                    (master_seed, path_index, label),
                                    blown_up=blown[leg],
                                    blowup_time=blow_time[leg],
                                    upto=None if not blown[leg] else last_ok[leg]))
    return out[0], out[1]


def self_convergence_errors(spec: DynamicsSpec, u0: SpectralState, i0: int,
                            T: float, master_seed: int, dt0: float,
                            n_levels: int, path_index: int = 0):
    """Strong self-convergence study: |u_dt(T) - u_{dt/2}(T)| per dyadic level.

    All levels consume one noise realization: chain atoms and jump events are
    drawn once, Wiener increments are drawn on the finest union grid and
    summed into the coarser cells.  Returns (dts, errors) with
    errors[l] = H-distance at T between levels l and l+1.
    """
    chain_rng = stream(master_seed, "refine", path_index, "chain")
    jump_rng = stream(master_seed, "refine", path_index, "jumps")
    wiener_rng = stream(master_seed, "refine", path_index, "wiener")

    chain_path = simulate_chain_skorohod(spec.chain, i0, T, chain_rng)
    jtimes, jmarks = sample_jump_times(spec.jumps, 0.0, T, jump_rng)
    jmap = {}
    for t, mk in zip(jtimes, jmarks):
        jmap.setdefault(float(t), []).append(int(mk))

    dts = [dt0 / 2 ** l for l in range(n_levels + 1)]
    grids = []
    for dt in dts:
        base = _base_grid(T, dt)
        cuts = sorted(set(float(x) for x in base)
                      | set(chain_path.switch_times_in(0.0, T))
                      | set(float(t) for t in jtimes))
        grids.append(cuts)
    finest = grids[-1]
    fine_dW = {}
    for a, b in zip(finest[:-1], finest[1:]):
        fine_dW[(a, b)] = sample_wiener_coeffs(spec.qwiener, b - a, wiener_rng)
    fine_cells = list(zip(finest[:-1], finest[1:]))
    prefix = np.zeros((len(finest), spec.modes.dimension, 3), dtype=complex)
    for idx, cell in enumerate(fine_cells):
        prefix[idx + 1] = prefix[idx] + fine_dW[cell]
    pos = {t: k for k, t in enumerate(finest)}

    stepper = _Stepper(spec, StepperConfig(dt=dt0))
    finals = []
    for cuts in grids:
        ucoef = u0.copy_coeffs()
        acc = _Accumulators()
        for a, b in zip(cuts[:-1], cuts[1:]):
            regime = chain_path.regime_at(a)
            dW = prefix[pos[b]] - prefix[pos[a]]
            ucoef = stepper.substep(ucoef, regime, b - a, dW, acc)
            for mk in jmap.get(b, ()):
                ucoef, _ = stepper.apply_jump(ucoef, chain_path.regime_before(b),
                                              mk, acc)
        if not np.all(np.isfinite(ucoef)):
            raise BlowUpError(T)
        finals.append(ucoef)
    errors = [float(np.sqrt(np.sum(np.abs(finals[l] - finals[l + 1]) ** 2)))
              for l in range(n_levels)]
    return np.array(dts[:-1]), np.array(errors)
