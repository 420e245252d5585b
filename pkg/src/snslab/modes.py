"""Divergence-free spectral surrogate spaces on the periodic box.

The simulation runs on [0, 2pi)^3 with mean-free velocity fields stored as
Fourier coefficients u_hat(k) for integer wavevectors 0 < |k|_inf <= N.
The Stokes operator is diagonal here (eigenvalue |k|^2, first eigenvalue
lambda_1 = 1) and the L2 pairing is volume-normalized so that the H-norm
is a plain coefficient l2 norm:

    |u|^2     = sum_k |u_hat(k)|^2
    ||u||^2   = sum_k |k|^2 |u_hat(k)|^2        (V-norm)
    ||f||_V'^2 = sum_k |k|^-2 |f_hat(k)|^2      (dual norm)

States are immutable; every operation returns a new state and is safe to
call concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModeSet",
    "SpectralState",
    "StokesSurrogate",
    "build_mode_set",
    "zero_state",
    "make_state",
    "random_solenoidal",
    "h_norm",
    "v_norm",
    "v_dual_norm",
    "pairing",
    "leray_project",
    "state_add",
    "state_scale",
    "serialize_state",
    "deserialize_state",
]

INCOMPRESSIBILITY_RTOL = 1e-12


class RealityError(ValueError):
    """Raised when per-mode data violates u_hat(-k) == conj(u_hat(k))."""


class IncompressibilityError(ValueError):
    """Raised when a state fails the divergence-free check."""


@dataclass(frozen=True)
class ModeSet:
    """Retained wavevectors k with 0 < |k|_inf <= cutoff, lexicographic order.

    The set is closed under k <-> -k and excludes the zero mode, so the
    represented fields are real and mean-free.  Derived index arrays
    (negation permutation, canonical half, Leray projectors) are built once
    and shared by every operation.
    """

    cutoff: int
    wavevectors: np.ndarray          # (dim, 3) int
    neg_index: np.ndarray            # index of -k for each k
    pos_index: np.ndarray            # canonical half: k lexicographically > -k
    k2: np.ndarray                   # |k|^2 per mode (float)
    projectors: np.ndarray           # (dim, 3, 3) Leray projector per mode
    _lookup: dict = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.wavevectors)

    def index_of(self, k) -> int:
        return self._lookup[tuple(int(c) for c in k)]

    def __eq__(self, other):
        return isinstance(other, ModeSet) and other.cutoff == self.cutoff

    def __hash__(self):
        return hash(("ModeSet", self.cutoff))


_MODE_SET_CACHE: dict = {}


def build_mode_set(cutoff: int) -> ModeSet:
    """Construct (and cache) the mode set for a given cutoff N >= 1."""
    if cutoff < 1:
        raise ValueError(f"cutoff must be a positive integer, got {cutoff}")
    cutoff = int(cutoff)
    if cutoff in _MODE_SET_CACHE:
        return _MODE_SET_CACHE[cutoff]

    rng = range(-cutoff, cutoff + 1)
    vecs = [k for k in itertools.product(rng, rng, rng) if k != (0, 0, 0)]
    wavevectors = np.array(vecs, dtype=np.int64)
    lookup = {tuple(v): i for i, v in enumerate(vecs)}
    neg_index = np.array([lookup[tuple(-c for c in v)] for v in vecs], dtype=np.int64)
    pos_index = np.array([i for i, v in enumerate(vecs) if v > tuple(-c for c in v)],
                         dtype=np.int64)
    kf = wavevectors.astype(float)
    k2 = np.einsum("ij,ij->i", kf, kf)
    projectors = np.eye(3)[None, :, :] - kf[:, :, None] * kf[:, None, :] / k2[:, None, None]

    for arr in (wavevectors, neg_index, pos_index, k2, projectors):
        arr.setflags(write=False)
    ms = ModeSet(cutoff, wavevectors, neg_index, pos_index, k2, projectors, lookup)
    _MODE_SET_CACHE[cutoff] = ms
    return ms


@dataclass(frozen=True)
class StokesSurrogate:
    """Diagonal Stokes operator data: eigenvalue |k|^2 per retained mode."""

    modes: ModeSet
    eigenvalues: np.ndarray
    lambda1: float

    @classmethod
    def for_modes(cls, modes: ModeSet) -> "StokesSurrogate":
        eig = modes.k2.copy()
        eig.setflags(write=False)
        return cls(modes, eig, float(eig.min()))


@dataclass(frozen=True)
class SpectralState:
    """Velocity field as complex Fourier coefficients, one 3-vector per mode."""

    modes: ModeSet
    coeffs: np.ndarray               # (dim, 3) complex128

    def __post_init__(self):
        self.coeffs.setflags(write=False)

    def copy_coeffs(self) -> np.ndarray:
        return np.array(self.coeffs)


def _check_reality(modes: ModeSet, coeffs: np.ndarray, rtol=1e-12):
    mirror = np.conj(coeffs[modes.neg_index])
    scale = np.abs(coeffs).max(initial=0.0)
    if np.abs(coeffs - mirror).max(initial=0.0) > rtol * max(scale, 1e-300):
        raise RealityError("coefficients violate u_hat(-k) == conj(u_hat(k))")


def _check_incompressible(modes: ModeSet, coeffs: np.ndarray,
                          rtol=INCOMPRESSIBILITY_RTOL):
    div = np.abs(np.einsum("ij,ij->i", modes.wavevectors.astype(float), coeffs))
    scale = np.sqrt(modes.k2) * np.linalg.norm(coeffs, axis=1)
    if np.any(div > rtol * np.maximum(scale, 1e-300)):
        raise IncompressibilityError("state is not divergence-free")


def _symmetrize(modes: ModeSet, coeffs: np.ndarray) -> np.ndarray:
    """Enforce the reality constraint exactly (average with mirrored conjugate)."""
    return 0.5 * (coeffs + np.conj(coeffs[modes.neg_index]))


def zero_state(modes: ModeSet) -> SpectralState:
    return SpectralState(modes, np.zeros((modes.dimension, 3), dtype=complex))


def make_state(modes: ModeSet, coeffs: np.ndarray, *, check: bool = True) -> SpectralState:
    """Wrap raw coefficients, optionally validating reality and incompressibility."""
    coeffs = np.ascontiguousarray(coeffs, dtype=complex)
    if coeffs.shape != (modes.dimension, 3):
        raise ValueError(f"expected coeffs of shape {(modes.dimension, 3)}, "
                         f"got {coeffs.shape}")
    if check:
        _check_reality(modes, coeffs)
        _check_incompressible(modes, coeffs)
    return SpectralState(modes, coeffs)


def leray_project(modes: ModeSet, raw: np.ndarray) -> SpectralState:
    """Project raw per-mode 3-vectors onto the divergence-free subspace.

    Rejects input that violates the reality symmetry; the output satisfies
    k . u_hat(k) = 0 mode by mode and the projection is idempotent.
    """
    raw = np.asarray(raw, dtype=complex)
    if raw.shape != (modes.dimension, 3):
        raise ValueError("raw coefficient array has the wrong shape")
    _check_reality(modes, raw)
    proj = np.einsum("kij,kj->ki", modes.projectors, raw)
    proj = _symmetrize(modes, proj)
    return SpectralState(modes, proj)


def project_coeffs(modes: ModeSet, raw: np.ndarray) -> np.ndarray:
    """Leray projection on a raw array, no validation (internal hot path)."""
    return np.einsum("kij,kj->ki", modes.projectors, raw)


def h_norm(u: SpectralState) -> float:
    """H-norm |u| (Parseval, domain volume normalized to 1)."""
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))


def v_norm(u: SpectralState) -> float:
    """V-norm ||u||: H-norm weighted by |k| per mode."""
    return float(np.sqrt(np.sum(u.modes.k2[:, None] * np.abs(u.coeffs) ** 2)))


def v_dual_norm(f: SpectralState) -> float:
    """Dual norm ||f||_V': H-norm weighted by 1/|k| per mode."""
    return float(np.sqrt(np.sum(np.abs(f.coeffs) ** 2 / f.modes.k2[:, None])))


def pairing(f: SpectralState, u: SpectralState) -> float:
    """Duality pairing <f, u>; equals the H inner product on the truncation."""
    if f.modes != u.modes:
        raise ValueError("pairing requires matching mode sets")
    return float(np.real(np.sum(f.coeffs * np.conj(u.coeffs))))


def state_add(a: SpectralState, b: SpectralState, alpha: float = 1.0) -> SpectralState:
    if a.modes != b.modes:
        raise ValueError("mode-set mismatch")
    return SpectralState(a.modes, a.coeffs + alpha * b.coeffs)


def state_scale(a: SpectralState, alpha: float) -> SpectralState:
    return SpectralState(a.modes, alpha * a.coeffs)


def random_solenoidal(modes: ModeSet, rng: np.random.Generator,
                      scale: float = 1.0, decay: float = 0.0) -> SpectralState:
    """Random divergence-free state with independent Gaussian mode amplitudes.

    ``decay`` > 0 damps mode k by |k|^-decay, giving smoother samples.
    """
    dim = modes.dimension
    raw = np.zeros((dim, 3), dtype=complex)
    z = rng.standard_normal((len(modes.pos_index), 3, 2))
    vals = (z[..., 0] + 1j * z[..., 1]) * (scale / np.sqrt(2.0))
    raw[modes.pos_index] = vals
    raw[modes.neg_index[modes.pos_index]] = np.conj(vals)
    if decay > 0:
        raw *= modes.k2[:, None] ** (-decay / 2.0)
    proj = project_coeffs(modes, raw)
    return SpectralState(modes, _symmetrize(modes, proj))


# ---------------------------------------------------------------------------
# Serialization: ordered (k, Re, Im) rows; repr-based floats round-trip exactly.

def serialize_state(u: SpectralState) -> str:
    lines = [f"spectral-state cutoff={u.modes.cutoff} dim={u.modes.dimension}"]
    for k, c in zip(u.modes.wavevectors, u.coeffs):
        parts = [str(int(k[0])), str(int(k[1])), str(int(k[2]))]
        for comp in c:
            parts.append(repr(float(comp.real)))
            parts.append(repr(float(comp.imag)))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def deserialize_state(text: str) -> SpectralState:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split()
    if not header or header[0] != "spectral-state":
        raise ValueError("not a serialized spectral state")
    fields = dict(item.split("=") for item in header[1:])
    modes = build_mode_set(int(fields["cutoff"]))
    if len(lines) - 1 != modes.dimension:
        raise ValueError("row count does not match mode-set dimension")
    coeffs = np.zeros((modes.dimension, 3), dtype=complex)
    for row, line in enumerate(lines[1:]):
        tok = line.split()
        k = (int(tok[0]), int(tok[1]), int(tok[2]))
        if tuple(modes.wavevectors[row]) != k:
            raise ValueError(f"wavevector order mismatch at row {row}")
        vals = [float(t) for t in tok[3:]]
        coeffs[row] = [complex(vals[0], vals[1]),
                       complex(vals[2], vals[3]),
                       complex(vals[4], vals[5])]
    return SpectralState(modes, coeffs)
