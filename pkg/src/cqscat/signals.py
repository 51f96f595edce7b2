"""Causal time signals with analytic first and second derivatives."""

from __future__ import annotations

from typing import Optional

import numpy as np

__all__ = ["CausalSignal", "SmoothRamp", "WindowedSine", "Sin6Heaviside", "Sin6Pulse"]


def _vectorized(fn):
    def wrapped(self, t):
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = fn(self, arr)
        return out[0] if np.ndim(t) == 0 else out.reshape(np.shape(t))

    return wrapped


class CausalSignal:
    """A signal vanishing for t <= 0, evaluable with two derivatives."""

    support_end: Optional[float] = None

    def __call__(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError


def _psi(x):
    """exp(-1/x) for x > 0, extended smoothly by zero."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 1e-12
    out[pos] = np.exp(-1.0 / x[pos])
    return out


class SmoothRamp(CausalSignal):
    """C-infinity ramp: 0 for t <= 0, 1 for t >= tau, monotone between."""

    def __init__(self, tau: float = 0.5):
        self.tau = float(tau)

    def _parts(self, t):
        u = np.asarray(t, dtype=float) / self.tau
        mid = (u > 1e-9) & (u < 1.0 - 1e-9)
        return u, mid

    @_vectorized
    def __call__(self, t):
        u, mid = self._parts(t)
        out = np.where(u >= 1.0 - 1e-9, 1.0, 0.0)
        a, b = _psi(u[mid]), _psi(1.0 - u[mid])
        out[mid] = a / (a + b)
        return out

    @_vectorized
    def d1(self, t):
        u, mid = self._parts(t)
        out = np.zeros_like(u)
        um = u[mid]
        a, b = _psi(um), _psi(1.0 - um)
        q = um**-2 + (1.0 - um) ** -2
        out[mid] = a * b * q / (a + b) ** 2 / self.tau
        return out

    @_vectorized
    def d2(self, t):
        u, mid = self._parts(t)
        out = np.zeros_like(u)
        um = u[mid]
        a, b = _psi(um), _psi(1.0 - um)
        q = um**-2 + (1.0 - um) ** -2
        dq = -2.0 * um**-3 + 2.0 * (1.0 - um) ** -3
        # N = a b q, D = (a + b)^2; chain rule with a' = a/u^2, b' = -b/(1-u)^2.
        da = a / um**2
        db = -b / (1.0 - um) ** 2
        N = a * b * q
        dN = (da * b + a * db) * q + a * b * dq
        D = (a + b) ** 2
        dD = 2.0 * (a + b) * (da + db)
        out[mid] = (dN / D - N * dD / D**2) / self.tau**2
        return out


class WindowedSine(CausalSignal):
    """sin(omega t) switched on by a smooth ramp, optionally switched off.

    With an end time the signal is compactly supported on
    [0, t_end]; the shut-off ramp mirrors the start-up ramp.
    """

    def __init__(self, omega: float = 2.0, tau: float = 0.5,
                 t_end: Optional[float] = None):
        self.omega = float(omega)
        self.ramp = SmoothRamp(tau)
        self.t_end = t_end
        self.support_end = t_end

    def _window(self, t):
        t = np.asarray(t, dtype=float)
        w, dw, ddw = self.ramp(t), self.ramp.d1(t), self.ramp.d2(t)
        if self.t_end is not None:
            v = self.t_end - t
            w2, dw2, ddw2 = self.ramp(v), -self.ramp.d1(v), self.ramp.d2(v)
            w, dw, ddw = (
                w * w2,
                dw * w2 + w * dw2,
                ddw * w2 + 2.0 * dw * dw2 + w * ddw2,
            )
        return w, dw, ddw

    @_vectorized
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.sin(self.omega * t) * self._window(t)[0]

    @_vectorized
    def d1(self, t):
        t = np.asarray(t, dtype=float)
        w, dw, _ = self._window(t)
        om = self.omega
        return om * np.cos(om * t) * w + np.sin(om * t) * dw

    @_vectorized
    def d2(self, t):
        t = np.asarray(t, dtype=float)
        w, dw, ddw = self._window(t)
        om = self.omega
        return (
            -om * om * np.sin(om * t) * w
            + 2.0 * om * np.cos(om * t) * dw
            + np.sin(om * t) * ddw
        )


class Sin6Heaviside(CausalSignal):
    """sin^6(omega t) for t > 0 (five continuous derivatives at zero)."""

    def __init__(self, omega: float = 4.0):
        self.omega = float(omega)

    def _mask(self, t):
        t = np.asarray(t, dtype=float)
        return t, t > 0

    @_vectorized
    def __call__(self, t):
        t, on = self._mask(t)
        out = np.zeros_like(t)
        out[on] = np.sin(self.omega * t[on]) ** 6
        return out

    @_vectorized
    def d1(self, t):
        t, on = self._mask(t)
        out = np.zeros_like(t)
        u = self.omega * t[on]
        out[on] = 6.0 * self.omega * np.sin(u) ** 5 * np.cos(u)
        return out

    @_vectorized
    def d2(self, t):
        t, on = self._mask(t)
        out = np.zeros_like(t)
        u = self.omega * t[on]
        out[on] = (
            6.0 * self.omega**2 * np.sin(u) ** 4 * (5.0 * np.cos(u) ** 2 - np.sin(u) ** 2)
        )
        return out


class Sin6Pulse(Sin6Heaviside):
    """One arch of sin^6(omega t): compact support [0, pi/omega]."""

    def __init__(self, omega: float = 4.0):
        super().__init__(omega)
        self.support_end = np.pi / self.omega

    def _mask(self, t):
        t = np.asarray(t, dtype=float)
        return t, (t > 0) & (t < self.support_end)
