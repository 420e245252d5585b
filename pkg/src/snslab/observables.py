"""Registered observables and feature projections.

Observables feed the time-averaged transition functionals: they take
(state, regime), must be bounded, and are looked up by name so that
scenario files and reports can refer to them stably.  Features are scalar
projections of the state alone (boundedness not required) used to build
occupation-measure sample clouds.
"""

from __future__ import annotations

import numpy as np

from .modes import SpectralState, h_norm, v_norm

__all__ = ["OBSERVABLES", "FEATURES", "register_observable", "register_feature"]

OBSERVABLES: dict = {}
FEATURES: dict = {}


def register_observable(name: str, fn):
    if name in OBSERVABLES:
        raise ValueError(f"observable {name!r} already registered")
    OBSERVABLES[name] = fn
    return fn


def register_feature(name: str, fn):
    if name in FEATURES:
        raise ValueError(f"feature {name!r} already registered")
    FEATURES[name] = fn
    return fn


def _lowest_mode_re(state: SpectralState) -> float:
    idx = state.modes.index_of((0, 0, 1))
    return float(state.coeffs[idx, 0].real)


def _lowest_mode_im(state: SpectralState) -> float:
    idx = state.modes.index_of((0, 0, 1))
    return float(state.coeffs[idx, 1].imag)


register_feature("h2", lambda s: h_norm(s) ** 2)
register_feature("v2", lambda s: v_norm(s) ** 2)
register_feature("re_u_x_k001", _lowest_mode_re)
register_feature("im_u_y_k001", _lowest_mode_im)

register_observable("one", lambda s, r: 1.0)
register_observable("h2_sat", lambda s, r: h_norm(s) ** 2 / (1.0 + h_norm(s) ** 2))
register_observable("v2_sat", lambda s, r: v_norm(s) ** 2 / (1.0 + v_norm(s) ** 2))
register_observable("exp_neg_h2", lambda s, r: float(np.exp(-h_norm(s) ** 2)))
register_observable("tanh_re_u_x_k001", lambda s, r: float(np.tanh(_lowest_mode_re(s))))
for _j in range(8):
    register_observable(f"regime_eq_{_j}",
                        (lambda j: lambda s, r: 1.0 if r == j else 0.0)(_j))
