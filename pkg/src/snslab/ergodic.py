"""Occupation measures, time-averaged functionals and long-run monitors.

Everything here is pure post-processing over immutable path records:
time-averaged occupation measures over (features of u, regime), a
Wasserstein-style pseudometric between them, exponential-stability decay
fits for coupled pairs, the running-sup martingale monitors, and the
Monte-Carlo check of the a-priori energy inequalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .integrate import (DynamicsSpec, PathRecord, StepperConfig,
                        simulate_coupled_pair)
from .modes import SpectralState
from .observables import OBSERVABLES

__all__ = [
    "OccupationMeasure",
    "StabilityReport",
    "occupation_measure",
    "kb_average",
    "empirical_distance",
    "stability_experiment",
    "martingale_monitor",
    "apriori_monitor",
]


@dataclass(frozen=True)
class OccupationMeasure:
    """Uniform-in-time weighted sample cloud of (features, regime)."""

    horizon: float
    feature_names: tuple
    samples: np.ndarray              # (n, n_features)
    regimes: np.ndarray              # (n,)
    weights: np.ndarray              # (n,), sums to 1
    n_regimes: int

    @property
    def regime_marginal(self) -> np.ndarray:
        marg = np.zeros(self.n_regimes)
        np.add.at(marg, self.regimes, self.weights)
        return marg


def occupation_measure(paths, t_n: float, feature_names=None,
                       burn_in: float = 0.0,
                       n_regimes: int | None = None) -> OccupationMeasure:
    """Time-averaged empirical law over an ensemble of records.

    Samples are the per-checkpoint feature values weighted uniformly in
    time and across paths, mirroring an average started at time zero.  A
    positive ``burn_in`` drops early samples; that variant is not the
    paper-faithful average and is off by default.

    Raises if any record stops short of the horizon.
    """
    clouds, regs = [], []
    names = None
    for p in paths:
        if p.horizon + 1e-12 < t_n:
            raise ValueError("record horizon shorter than requested average")
        if p.feature_series is not None:
            names = names or p.feature_names
            mask = (p.checkpoint_times <= t_n + 1e-12) & \
                   (p.checkpoint_times >= burn_in - 1e-12)
            clouds.append(p.feature_series[mask])
            times = p.checkpoint_times[mask]
        else:
            if feature_names is None:
                raise ValueError("record has no feature series; pass feature_names "
                                 "and store states")
            from .observables import FEATURES
            names = names or tuple(feature_names)
            times, rows = [], []
            for tt, st in zip(p.checkpoint_times, p.checkpoint_states):
                if st is None or tt > t_n + 1e-12 or tt < burn_in - 1e-12:
                    continue
                times.append(tt)
                rows.append([FEATURES[nm](st) for nm in names])
            clouds.append(np.array(rows))
            times = np.array(times)
        regs.append(np.array([p.chain_path.regime_at(tt) for tt in times]))
    samples = np.concatenate(clouds, axis=0)
    regimes = np.concatenate(regs, axis=0)
    n = len(samples)
    if n == 0:
        raise ValueError("no samples in the requested window")
    weights = np.full(n, 1.0 / n)
    if n_regimes is None:
        n_regimes = int(regimes.max(initial=0)) + 1
    return OccupationMeasure(t_n, tuple(names), samples, regimes, weights,
                             int(n_regimes))


def kb_average(path: PathRecord, phi: str, t: float) -> float:
    """(1/t) int_0^t phi(u(s), r(s)) ds over the checkpoint grid (trapezoid)."""
    if phi not in OBSERVABLES:
        raise KeyError(f"observable {phi!r} is not registered")
    if path.horizon + 1e-12 < t:
        raise ValueError("record horizon shorter than requested average")
    fn = OBSERVABLES[phi]
    mask = path.checkpoint_times <= t + 1e-12
    times = path.checkpoint_times[mask]
    vals = []
    for tt, st in zip(times, [s for s, m in zip(path.checkpoint_states, mask) if m]):
        if st is None:
            raise ValueError("kb_average needs stored states at checkpoints")
        vals.append(fn(st, path.chain_path.regime_at(tt)))
    if len(vals) < 2:
        raise ValueError("need at least two checkpoints inside [0, t]")
    return float(np.trapezoid(np.array(vals), times) / (times[-1] - times[0]))


def _w1_sorted(xa, wa, xb, wb) -> float:
    return float(wasserstein_distance(xa, xb, u_weights=wa, v_weights=wb))


def empirical_distance(a: OccupationMeasure, b: OccupationMeasure) -> float:
    """Pseudometric: regime-weight gap plus per-regime feature W1 distances.

    Regimes empty on either side contribute only through the weight gap.
    """
    if a.feature_names != b.feature_names:
        raise ValueError("occupation measures use different feature descriptors")
    n_regimes = max(a.n_regimes, b.n_regimes)
    wa = np.zeros(n_regimes)
    wb = np.zeros(n_regimes)
    np.add.at(wa, a.regimes, a.weights)
    np.add.at(wb, b.regimes, b.weights)
    total = float(np.abs(wa - wb).sum())
    for j in range(n_regimes):
        ma = a.regimes == j
        mb = b.regimes == j
        if not ma.any() or not mb.any():
            continue
        for col in range(len(a.feature_names)):
            total += _w1_sorted(a.samples[ma, col], a.weights[ma],
                                b.samples[mb, col], b.weights[mb])
    return total


@dataclass(frozen=True)
class StabilityReport:
    """Decay diagnostics for an ensemble of synchronously coupled pairs."""

    t: np.ndarray
    mean_w2: np.ndarray
    stderr_w2: np.ndarray
    fit_rate: float
    fit_intercept: float
    fit_r2: float
    fit_window: tuple
    effective_rate_mean: np.ndarray   # nu lambda1 - (1/(nu t)) int ||u1||^2
    effective_rate_min: np.ndarray
    K: float
    K_crit: float
    n_reps: int
    n_blowups: int

    @property
    def decay_observed(self) -> bool:
        return self.fit_rate < 0.0 and self.fit_r2 >= 0.9

    @property
    def verdict(self) -> str:
        return "decay observed" if self.decay_observed else "decay not observed"


def _log_linear_fit(t, y):
    keep = y > 0
    if keep.sum() < 3:
        return 0.0, 0.0, 0.0
    tt, yy = t[keep], np.log(y[keep])
    A = np.vstack([tt, np.ones_like(tt)]).T
    coef, *_ = np.linalg.lstsq(A, yy, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((yy - pred) ** 2))
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def stability_experiment(spec: DynamicsSpec, cfg: StepperConfig,
                         u0_a: SpectralState, u0_b: SpectralState,
                         i0_a: int, i0_b: int, T: float, reps: int,
                         master_seed: int, fit_tail_fraction: float = 0.5,
                         label: str = "stability") -> StabilityReport:
    """Ensemble decay of |u1(t) - u2(t)|^2 under shared noise.

    Pairs that blow up are excluded from the averages and counted.  The
    exponential rate is a log-linear fit of the ensemble mean over the tail
    window; rate-sign conclusions are only meaningful when the recorded R^2
    is at least 0.9.
    """
    w2_all, eff_all = [], []
    n_blow = 0
    t_ck = None
    for r in range(reps):
        rec_a, rec_b = simulate_coupled_pair(
            spec, cfg, u0_a, u0_b, i0_a, i0_b, T, master_seed, r, label=label,
            store_states=True)
        if rec_a.blown_up or rec_b.blown_up:
            n_blow += 1
            continue
        t_ck = rec_a.checkpoint_times
        w2 = np.array([float(np.sum(np.abs(sa.coeffs - sb.coeffs) ** 2))
                       for sa, sb in zip(rec_a.checkpoint_states,
                                         rec_b.checkpoint_states)])
        w2_all.append(w2)
        base_idx = np.searchsorted(rec_a.t, t_ck)
        with np.errstate(divide="ignore", invalid="ignore"):
            eff = spec.nu * spec.lambda1 - rec_a.int_v2[base_idx] / (spec.nu * t_ck)
        eff[0] = spec.nu * spec.lambda1
        eff_all.append(eff)
    if not w2_all:
        raise RuntimeError("every replicate blew up")
    W = np.array(w2_all)
    E = np.array(eff_all)
    mean_w2 = W.mean(axis=0)
    stderr = W.std(axis=0, ddof=1) / np.sqrt(len(W)) if len(W) > 1 else np.zeros_like(mean_w2)
    lo = int(len(t_ck) * (1.0 - fit_tail_fraction))
    rate, intercept, r2 = _log_linear_fit(t_ck[lo:], mean_w2[lo:])
    return StabilityReport(
        t=t_ck, mean_w2=mean_w2, stderr_w2=stderr, fit_rate=rate,
        fit_intercept=intercept, fit_r2=r2,
        fit_window=(float(t_ck[lo]), float(t_ck[-1])),
        effective_rate_mean=E.mean(axis=0), effective_rate_min=E.min(axis=0),
        K=spec.K, K_crit=spec.K_crit, n_reps=reps, n_blowups=n_blow)


def martingale_monitor(path: PathRecord):
    """Running sup |M_i| / t at the record's base times (t > 0)."""
    t = path.t[1:]
    m1_star = np.maximum.accumulate(np.abs(path.m1))[1:]
    m2_star = np.maximum.accumulate(np.abs(path.m2))[1:]
    return t, m1_star / t, m2_star / t


def apriori_monitor(paths, spec: DynamicsSpec, checkpoints=None):
    """Monte-Carlo audit of the first-moment energy inequality.

    Returns rows (t, lhs_mean, lhs_stderr, rhs, slack, violated) for the
    running inequality

        E|u(t)|^2 + nu E int_0^t ||u||^2 <= E|u0|^2 + (F/nu) t + 2 K t

    plus a single-row summary dict for the sup-in-time variant with its
    4/(3 nu) forcing weight and 100 K T tail; violations are flagged only
    beyond three combined standard errors.
    """
    alive = [p for p in paths if not p.blown_up]
    if not alive:
        raise ValueError("no surviving paths")
    t = alive[0].t
    if checkpoints is None:
        checkpoints = np.arange(len(t))
    K = spec.K
    F = spec.forcing_dual_sq
    nu = spec.nu
    h2 = np.array([p.h2 for p in alive])
    iv2 = np.array([p.int_v2 for p in alive])
    lhs_paths = h2 + nu * iv2
    e_u0 = float(h2[:, 0].mean())
    rows = []
    for idx in checkpoints:
        lhs = float(lhs_paths[:, idx].mean())
        se = (float(lhs_paths[:, idx].std(ddof=1)) / np.sqrt(len(alive))
              if len(alive) > 1 else 0.0)
        rhs = e_u0 + (F / nu) * t[idx] + 2.0 * K * t[idx]
        rows.append({
            "t": float(t[idx]), "lhs_mean": lhs, "lhs_stderr": se,
            "rhs": rhs, "slack": rhs - lhs,
            "violated": bool(lhs - rhs > 3.0 * se),
        })
    sup_paths = h2.max(axis=1) + nu * iv2[:, -1]
    sup_mean = float(sup_paths.mean())
    sup_se = (float(sup_paths.std(ddof=1)) / np.sqrt(len(alive))
              if len(alive) > 1 else 0.0)
    T = float(t[-1])
    sup_rhs = 2.0 * e_u0 + (4.0 / (3.0 * nu)) * F * T + 100.0 * K * T
    summary = {
        "T": T, "sup_lhs_mean": sup_mean, "sup_lhs_stderr": sup_se,
        "sup_rhs": sup_rhs, "sup_violated": bool(sup_mean - sup_rhs > 3.0 * sup_se),
        "rhs_terms": {"e_u0": e_u0, "forcing": (F / nu) * T, "noise": 2.0 * K * T},
        "n_paths": len(alive), "n_blowups": len(paths) - len(alive),
    }
    return rows, summary
