"""Leray smoothing as a Fourier multiplier.

Convolution with the rescaled standard bump eta_eps becomes multiplication
by eta_hat(eps * |k|) on each mode, where eta is the radial bump

    eta(x) = C exp(1 / (|x|^2 - 1))  for |x| < 1,   0 otherwise,

normalized so its integral is 1.  eta_hat has no closed form; it is
evaluated by adaptive radial quadrature

    eta_hat(s) = 4 pi C int_0^1 exp(1/(r^2-1)) r^2 sinc(s r) dr

and cached.  Multipliers lie in (0, 1] and decrease with |k| as long as
eps * |k|_max stays below the first zero of eta_hat; construction fails
outside that validated range.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .modes import ModeSet, SpectralState

__all__ = [
    "MollifierSpec",
    "build_multiplier",
    "mollify",
    "eta_hat",
    "first_eta_hat_zero",
    "max_valid_epsilon",
    "multiplier_table_csv",
]

_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-13, limit=200)


def _bump_profile(r):
    return np.where(r < 1.0, np.exp(1.0 / (np.clip(r, 0.0, 1.0 - 1e-300) ** 2 - 1.0)), 0.0)


@lru_cache(maxsize=1)
def _norm_constant() -> float:
    # C such that 4 pi C int_0^1 exp(1/(r^2-1)) r^2 dr = 1
    val, _ = quad(lambda r: _bump_profile(r) * r * r, 0.0, 1.0, **_QUAD_OPTS)
    return 1.0 / (4.0 * np.pi * val)


@lru_cache(maxsize=None)
def eta_hat(s: float) -> float:
    """Fourier transform of the normalized bump at radial frequency s >= 0."""
    s = float(s)
    if s == 0.0:
        return 1.0
    c = _norm_constant()

    def integrand(r):
        x = s * r
        sinc = np.sin(x) / x if x != 0.0 else 1.0
        return _bump_profile(r) * r * r * sinc

    val, _ = quad(integrand, 0.0, 1.0, **_QUAD_OPTS)
    return 4.0 * np.pi * c * val


@lru_cache(maxsize=1)
def first_eta_hat_zero() -> float:
    """Smallest s > 0 with eta_hat(s) = 0; multipliers are positive below it."""
    lo = 0.25
    while eta_hat(lo) > 0.0:
        hi = lo + 0.25
        if eta_hat(hi) <= 0.0:
            return float(brentq(eta_hat, lo, hi, xtol=1e-12))
        lo = hi
        if lo > 100.0:
            raise RuntimeError("no sign change of eta_hat found below s=100")
    raise RuntimeError("eta_hat non-positive at the scan origin")


def max_valid_epsilon(modes: ModeSet) -> float:
    """Largest eps keeping every retained multiplier strictly positive."""
    kmax = float(np.sqrt(modes.k2.max()))
    return first_eta_hat_zero() / kmax


@dataclass(frozen=True)
class MollifierSpec:
    """Cached multiplier table for one (epsilon, mode set) pair."""

    epsilon: float
    modes: ModeSet
    table: tuple                     # ((|k|^2 as int, multiplier), ...) sorted
    per_mode: np.ndarray             # multiplier aligned with the mode order

    def __post_init__(self):
        self.per_mode.setflags(write=False)


def build_multiplier(epsilon: float, modes: ModeSet) -> MollifierSpec:
    """Evaluate eta_hat(eps |k|) on every retained shell and validate it.

    eps = 0 yields the identity (all multipliers exactly 1).  Raises for
    negative eps, and for eps large enough that some multiplier leaves
    (0, 1] or the table stops being nonincreasing in |k|.
    """
    epsilon = float(epsilon)
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    k2_values = sorted({int(round(v)) for v in modes.k2})
    if epsilon == 0.0:
        table = tuple((k2, 1.0) for k2 in k2_values)
        per_mode = np.ones(modes.dimension)
        return MollifierSpec(0.0, modes, table, per_mode)

    mult = {k2: eta_hat(epsilon * np.sqrt(k2)) for k2 in k2_values}
    vals = [mult[k2] for k2 in k2_values]
    if min(vals) <= 0.0 or max(vals) > 1.0 + 1e-12:
        raise ValueError(
            f"epsilon={epsilon} leaves the validated multiplier range "
            f"(requires eps < {max_valid_epsilon(modes):.6f} for cutoff {modes.cutoff})")
    if np.any(np.diff(vals) > 1e-12):
        raise ValueError(f"multiplier table not nonincreasing at epsilon={epsilon}")
    per_mode = np.array([mult[int(round(v))] for v in modes.k2])
    return MollifierSpec(epsilon, modes, tuple((k2, mult[k2]) for k2 in k2_values),
                         per_mode)


def mollify(u: SpectralState, m: MollifierSpec) -> SpectralState:
    """Apply the multiplier to each mode; identity (same object) for eps = 0."""
    if u.modes != m.modes:
        raise ValueError("state and multiplier built over different mode sets")
    if m.epsilon == 0.0:
        return u
    return SpectralState(u.modes, u.coeffs * m.per_mode[:, None])


def multiplier_table_csv(m: MollifierSpec) -> str:
    """CSV rows (|k|, multiplier) for plots and debugging."""
    buf = io.StringIO()
    buf.write("k_abs,multiplier\n")
    for k2, val in m.table:
        buf.write(f"{np.sqrt(k2)!r},{val!r}\n")
    return buf.getvalue()
