"""Truncated Taylor-jet arithmetic over grid-valued coefficients.

A :class:`Jet` is a polynomial ``x(s) = sum_n x_n s^n`` truncated at a fixed
order, whose coefficients ``x_n`` are arrays over some base shape (typically
a torus grid, possibly with trailing component axes).  Arithmetic follows the
usual truncated-polynomial rules; ``sin``/``cos`` use the standard
automatic-differentiation recurrences so map models evaluate on jets exactly
as they do on plain arrays.
"""

import numpy as np


class Jet:
    """Coefficients stacked along axis 0: shape ``(order+1,) + base_shape``."""

    __slots__ = ("coef",)

    def __init__(self, coef):
        self.coef = np.asarray(coef, dtype=float)

    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value, dtype=float)
        coef = np.zeros((order + 1,) + value.shape)
        coef[0] = value
        return cls(coef)

    @property
    def order(self):
        return self.coef.shape[0] - 1

    @property
    def base_shape(self):
        return self.coef.shape[1:]

    def copy(self):
        return Jet(self.coef.copy())

    def pad(self, order):
        if order < self.order:
            raise ValueError("pad cannot lower the order")
        coef = np.zeros((order + 1,) + self.base_shape)
        coef[: self.order + 1] = self.coef
        return Jet(coef)

    def truncate(self, order):
        return Jet(self.coef[: order + 1].copy())

    def component(self, idx):
        """Select a trailing-axis component, e.g. one phase-space coordinate."""
        return Jet(self.coef[(slice(None), ...) + (idx,)])

    def evaluate(self, s):
        """Horner evaluation at (a batch of) parameter values ``s``."""
        s = np.asarray(s, dtype=float)
        out = np.broadcast_to(self.coef[-1], s.shape + self.base_shape).copy()
        for n in range(self.order - 1, -1, -1):
            out = out * s.reshape(s.shape + (1,) * len(self.base_shape)) + self.coef[n]
        return out

    # -- ring operations ------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError("jet orders differ")
            return other
        return Jet.constant(np.asarray(other, dtype=float), self.order)

    def __add__(self, other):
        other = self._coerce(other)
        return Jet(self.coef + other.coef)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        return Jet(self.coef - other.coef)

    def __rsub__(self, other):
        other = self._coerce(other)
        return Jet(other.coef - self.coef)

    def __neg__(self):
        return Jet(-self.coef)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coef * np.asarray(other, dtype=float))
        if other.order != self.order:
            raise ValueError("jet orders differ")
        L = self.order
        out = np.zeros_like(self.coef)
        for n in range(L + 1):
            for k in range(n + 1):
                out[n] += self.coef[k] * other.coef[n - k]
        return Jet(out)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __repr__(self):
        return f"Jet(order={self.order}, base_shape={self.base_shape})"


def sin2pi(x):
    """sin(2*pi*x) for arrays or jets."""
    if isinstance(x, Jet):
        s, _ = _sincos_jet(x)
        return s
    return np.sin(2.0 * np.pi * np.asarray(x))


def cos2pi(x):
    """cos(2*pi*x) for arrays or jets."""
    if isinstance(x, Jet):
        _, c = _sincos_jet(x)
        return c
    return np.cos(2.0 * np.pi * np.asarray(x))


def _sincos_jet(u):
    """Joint sin/cos recurrence for v = 2*pi*u."""
    L = u.order
    alpha = 2.0 * np.pi
    s = np.zeros_like(u.coef)
    c = np.zeros_like(u.coef)
    s[0] = np.sin(alpha * u.coef[0])
    c[0] = np.cos(alpha * u.coef[0])
    for n in range(1, L + 1):
        acc_s = np.zeros_like(s[0])
        acc_c = np.zeros_like(c[0])
        for k in range(1, n + 1):
            acc_s += k * u.coef[k] * c[n - k]
            acc_c += k * u.coef[k] * s[n - k]
        s[n] = alpha * acc_s / n
        c[n] = -alpha * acc_c / n
    return Jet(s), Jet(c)


def reciprocal(a):
    """Multiplicative inverse of a scalar jet (order-0 term nonzero)."""
    L = a.order
    out = np.zeros_like(a.coef)
    out[0] = 1.0 / a.coef[0]
    for n in range(1, L + 1):
        acc = np.zeros_like(out[0])
        for k in range(1, n + 1):
            acc += a.coef[k] * out[n - k]
        out[n] = -out[0] * acc
    return Jet(out)


def jet_matmul(a, b):
    """Matrix product of matrix/vector jets (convolution over orders)."""
    L = a.order
    if b.order != L:
        raise ValueError("jet orders differ")
    first = np.matmul(a.coef[0], b.coef[0])
    out = np.zeros((L + 1,) + first.shape)
    for n in range(L + 1):
        for k in range(n + 1):
            out[n] += np.matmul(a.coef[k], b.coef[n - k])
    return Jet(out)


def jet_transpose(a):
    return Jet(np.swapaxes(a.coef, -1, -2))


def jet_matinv(a):
    """Inverse of a square-matrix jet via the order recursion."""
    L = a.order
    out = np.zeros_like(a.coef)
    out[0] = np.linalg.inv(a.coef[0])
    for n in range(1, L + 1):
        acc = np.zeros_like(out[0])
        for k in range(1, n + 1):
            acc += np.matmul(a.coef[k], out[n - k])
        out[n] = -np.matmul(out[0], acc)
    return Jet(out)


def jet_stack(entries, order):
    """Stack scalar-like entries (jets, arrays, numbers) along a new last axis."""
    cols = []
    base = None
    for e in entries:
        if isinstance(e, Jet):
            base = e.base_shape
            break
    for e in entries:
        if isinstance(e, Jet):
            cols.append(e.pad(order).coef if e.order < order else e.coef)
        else:
            arr = np.asarray(e, dtype=float)
            coef = np.zeros((order + 1,) + (base or arr.shape))
            coef[0] = arr
            cols.append(coef)
    return Jet(np.stack(cols, axis=-1))
