"""Trilinear form b, inertial operator B, and the mollified B_eps.

Two evaluation paths cross-check each other:

* direct convolution over index triples k1 + k2 = k (exact, used for
  cutoff <= 4 and as the oracle), and
* a padded-FFT pseudo-spectral path.  The grid holds at least 3N+1 points
  per axis, so the retained cutoff N is at most 2/3 of the grid Nyquist
  and quadratic products are alias-free on every kept mode; the padding
  region acts as the dealias mask.

Both paths compute the Galerkin truncation of (u . grad) v, hence the
skew symmetry b(u, v, w) = -b(u, w, v) survives truncation exactly and
<B(u, u), u> vanishes to roundoff.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import next_fast_len

from .mollifier import MollifierSpec, mollify
from .modes import (ModeSet, SpectralState, _symmetrize, h_norm,
                    project_coeffs, random_solenoidal, v_norm,
                    _check_incompressible)

__all__ = ["NonlinearityEngine", "estimate_interpolation_constant"]

_DIRECT_CUTOFF_LIMIT = 6


class NonlinearityEngine:
    """Stateless evaluator for b(u, v, w) and B(u, v) on one mode set.

    method: 'direct', 'transform', or 'auto' (direct for cutoff <= 4,
    transform above, matching where each is cheapest).
    """

    def __init__(self, modes: ModeSet, method: str = "auto"):
        if method not in ("auto", "direct", "transform"):
            raise ValueError(f"unknown method {method!r}")
        self.modes = modes
        self.method = method
        self.grid_size = next_fast_len(3 * modes.cutoff + 1)
        # mask bound of the 2/3 rule: keep |k_i| <= cutoff = 2/3 * (3N/2)
        self.dealias_bound = modes.cutoff
        self._direct_tables = None
        self._grid_index = None
        self._grid_k = None

    # -- shared helpers ----------------------------------------------------

    def _resolve_method(self) -> str:
        if self.method != "auto":
            return self.method
        return "direct" if self.modes.cutoff <= 4 else "transform"

    def _require_compatible(self, *states: SpectralState):
        for s in states:
            if s.modes != self.modes:
                raise ValueError("mode-set mismatch between engine and state")
            _check_incompressible(self.modes, s.coeffs)

    # -- direct convolution path -------------------------------------------

    def _tables(self):
        if self._direct_tables is None:
            if self.modes.cutoff > _DIRECT_CUTOFF_LIMIT:
                raise ValueError("direct path disabled above cutoff "
                                 f"{_DIRECT_CUTOFF_LIMIT}")
            W = self.modes.wavevectors
            n = self.modes.dimension
            N = self.modes.cutoff
            sums = W[:, None, :] + W[None, :, :]           # (n, n, 3)
            inside = (np.abs(sums) <= N).all(axis=2) & (sums != 0).any(axis=2)
            i1, i2 = np.nonzero(inside)
            side = 2 * N + 1
            cube = np.full((side, side, side), -1, dtype=np.int64)
            idx = W + N
            cube[idx[:, 0], idx[:, 1], idx[:, 2]] = np.arange(n)
            s = sums[i1, i2] + N
            iout = cube[s[:, 0], s[:, 1], s[:, 2]]
            self._direct_tables = (i1, i2, iout)
        return self._direct_tables

    def _convolve_direct(self, ucoef: np.ndarray, vcoef: np.ndarray) -> np.ndarray:
        """Galerkin coefficients of (u . grad) v via explicit convolution."""
        i1, i2, iout = self._tables()
        kf = self.modes.wavevectors.astype(float)
        # i (u_hat(k1) . k2) v_hat(k2), accumulated at k1 + k2
        scal = 1j * np.einsum("pj,pj->p", ucoef[i1], kf[i2])
        contrib = scal[:, None] * vcoef[i2]
        out = np.zeros((self.modes.dimension, 3), dtype=complex)
        np.add.at(out, iout, contrib)
        return out

    # -- padded transform path ----------------------------------------------

    def _grid_tables(self):
        if self._grid_index is None:
            M = self.grid_size
            idx = np.mod(self.modes.wavevectors, M)
            self._grid_index = (idx[:, 0], idx[:, 1], idx[:, 2])
            freq = np.fft.fftfreq(M, d=1.0 / M)
            self._grid_k = freq
        return self._grid_index, self._grid_k

    def _to_grid(self, coef: np.ndarray) -> np.ndarray:
        (ix, iy, iz), _ = self._grid_tables()
        M = self.grid_size
        cube = np.zeros((M, M, M, 3), dtype=complex)
        cube[ix, iy, iz, :] = coef
        return cube

    def _convolve_transform(self, ucoef: np.ndarray, vcoef: np.ndarray) -> np.ndarray:
        (ix, iy, iz), freq = self._grid_tables()
        M = self.grid_size
        ucube = self._to_grid(ucoef)
        vcube = self._to_grid(vcoef)
        u_phys = np.real(np.fft.ifftn(ucube, axes=(0, 1, 2)) * M ** 3)
        prod = np.zeros((M, M, M, 3))
        for i, kvec in enumerate((freq[:, None, None, None],
                                  freq[None, :, None, None],
                                  freq[None, None, :, None])):
            dv = np.real(np.fft.ifftn(1j * kvec * vcube, axes=(0, 1, 2)) * M ** 3)
            prod += u_phys[..., i:i + 1] * dv
        phat = np.fft.fftn(prod, axes=(0, 1, 2)) / M ** 3
        return phat[ix, iy, iz, :]

    def _convolve(self, ucoef: np.ndarray, vcoef: np.ndarray,
                  method: str | None = None) -> np.ndarray:
        m = method or self._resolve_method()
        if m == "direct":
            return self._convolve_direct(ucoef, vcoef)
        return self._convolve_transform(ucoef, vcoef)

    # -- public operations ---------------------------------------------------

    def trilinear_b(self, u: SpectralState, v: SpectralState, w: SpectralState,
                    method: str | None = None) -> float:
        """b(u, v, w) = sum_ij int u_i d_i v_j w_j (volume-normalized).

        The imaginary residual of the spectral sum is asserted below 1e-10
        relative to the norm product, then discarded.
        """
        self._require_compatible(u, v, w)
        conv = self._convolve(u.coeffs, v.coeffs, method)
        total = complex(np.sum(conv * np.conj(w.coeffs)))
        scale = h_norm(u) * v_norm(v) * h_norm(w)
        if abs(total.imag) > 1e-10 * scale + 1e-14:
            raise FloatingPointError(
                f"imaginary residual {total.imag:.3e} exceeds tolerance")
        return float(total.real)

    def inertial_b(self, u: SpectralState, v: SpectralState,
                   method: str | None = None) -> SpectralState:
        """B(u, v): Leray-projected advection, <B(u, v), w> = b(u, v, w)."""
        self._require_compatible(u, v)
        conv = self._convolve(u.coeffs, v.coeffs, method)
        proj = project_coeffs(self.modes, conv)
        return SpectralState(self.modes, _symmetrize(self.modes, proj))

    def regularized_b(self, u: SpectralState, v: SpectralState,
                      m: MollifierSpec, method: str | None = None) -> SpectralState:
        """B_eps(u, v) = B(k_eps u, v)."""
        return self.inertial_b(mollify(u, m), v, method)

    def inertial_coeffs(self, ucoef: np.ndarray, vcoef: np.ndarray,
                        umult: np.ndarray | None = None) -> np.ndarray:
        """Raw-array B(k_eps u, v) for the integrator hot loop (no checks)."""
        if umult is not None:
            ucoef = ucoef * umult[:, None]
        conv = self._convolve(ucoef, vcoef)
        return project_coeffs(self.modes, conv)


def estimate_interpolation_constant(engine: NonlinearityEngine, m: MollifierSpec,
                                    samples: int, rng: np.random.Generator) -> float:
    """Empirical constant in |b(k_eps u, v, w)| <= C ||u||^.5 |u|^.5 ||v|| ||w||^.5 |w|^.5.

    Returns the max ratio over random incompressible triples with the bound's
    right side evaluated at C = 1.  The surrogate normalizes C_eps = 1 in the
    dynamics; this measures what the constant actually is on the truncation.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    worst = 0.0
    for _ in range(samples):
        u = random_solenoidal(engine.modes, rng)
        v = random_solenoidal(engine.modes, rng)
        w = random_solenoidal(engine.modes, rng)
        num = abs(engine.trilinear_b(mollify(u, m), v, w))
        den = (np.sqrt(v_norm(u) * h_norm(u)) * v_norm(v)
               * np.sqrt(v_norm(w) * h_norm(w)))
        if den > 0:
            worst = max(worst, num / den)
    return worst
