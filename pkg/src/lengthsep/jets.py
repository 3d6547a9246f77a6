"""Truncated Taylor-series (jet) arithmetic.

A jet holds coefficients c[0..K] of sum_k c_k h^k, each coefficient a numpy
array over an arbitrary grid.  Used to get exact derivatives of the composite
radial profiles (bump factor, curvature integrand) without symbolic algebra.
"""

import numpy as np


class Jet:
    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = [np.asarray(x, dtype=float) for x in coeffs]

    @property
    def order(self):
        return len(self.c) - 1

    @classmethod
    def variable(cls, x, order):
        """Jet of the identity function t -> t expanded at x."""
        x = np.asarray(x, dtype=float)
        c = [x, np.ones_like(x)]
        while len(c) < order + 1:
            c.append(np.zeros_like(x))
        return cls(c[: order + 1])

    @classmethod
    def constant(cls, x, order, like=None):
        x = np.asarray(x, dtype=float)
        if like is not None:
            x = x * np.ones_like(np.asarray(like, dtype=float))
        return cls([x] + [np.zeros_like(x) for _ in range(order)])

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet([a + b for a, b in zip(self.c, other.c)])
        return Jet([self.c[0] + other] + self.c[1:])

    __radd__ = __add__

    def __neg__(self):
        return Jet([-a for a in self.c])

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet([a * other for a in self.c])
        K = self.order
        out = []
        for k in range(K + 1):
            acc = np.zeros_like(self.c[0])
            for j in range(k + 1):
                acc = acc + self.c[j] * other.c[k - j]
            out.append(acc)
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / other)
        K = self.order
        z = []
        for k in range(K + 1):
            acc = self.c[k].copy()
            for j in range(k):
                acc = acc - z[j] * other.c[k - j]
            z.append(acc / other.c[0])
        return Jet(z)

    def __rtruediv__(self, other):
        return Jet.constant(other, self.order, like=self.c[0]) / self


def jet_exp(u):
    K = u.order
    y = [np.exp(u.c[0])]
    for k in range(1, K + 1):
        acc = np.zeros_like(u.c[0])
        for j in range(1, k + 1):
            acc = acc + j * u.c[j] * y[k - j]
        y.append(acc / k)
    return Jet(y)


def jet_log(u):
    K = u.order
    y = [np.log(u.c[0])]
    for k in range(1, K + 1):
        acc = u.c[k].copy()
        for j in range(1, k):
            acc = acc - (j / k) * y[j] * u.c[k - j]
        y.append(acc / u.c[0])
    return Jet(y)


def jet_sqrt(u):
    K = u.order
    y = [np.sqrt(u.c[0])]
    for k in range(1, K + 1):
        acc = u.c[k].copy()
        for j in range(1, k):
            acc = acc - y[j] * y[k - j]
        y.append(acc / (2.0 * y[0]))
    return Jet(y)


def jet_cosh_sinh(u):
    """cosh(u), sinh(u) jets via the coupled derivative recurrence."""
    K = u.order
    ch = [np.cosh(u.c[0])]
    sh = [np.sinh(u.c[0])]
    for k in range(1, K + 1):
        a = np.zeros_like(u.c[0])
        b = np.zeros_like(u.c[0])
        for j in range(1, k + 1):
            a = a + j * u.c[j] * sh[k - j]
            b = b + j * u.c[j] * ch[k - j]
        ch.append(a / k)
        sh.append(b / k)
    return Jet(ch), Jet(sh)


def derivatives(jet):
    """Convert jet coefficients to derivative values d^k f / dt^k = k! c_k."""
    fact = 1.0
    out = []
    for k, c in enumerate(jet.c):
        if k > 0:
            fact *= k
        out.append(c * fact)
    return out
