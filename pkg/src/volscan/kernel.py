"""Statistic kernels supported on [-1, 1] and the constants derived from them.

A kernel ``psi`` enters the scan statistic only through its cell integrals,
so every kernel exposes a vectorised :meth:`Kernel.integral` (and
:meth:`Kernel.integral_sq` for squared integrands).  Power kernels
``1 - |x|**beta`` and tabulated piecewise-linear kernels have closed-form
primitives; the smooth bump falls back to composite Gauss-Legendre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import InvalidParameterError, SchemaError

FORMS = ("optimal_recovery", "triangle", "tabulated", "smooth_bump")

MIN_TABULATED_POINTS = 4096

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_GL_PANELS = 8


def eval_psi_beta(beta, x):
    """Evaluate the optimal recovery kernel ``1{|x|<=1} (1 - |x|**beta)``.

    Parameters
    ----------
    beta : float
        Smoothness in (0, 1].
    x : float or array_like
        Evaluation points.

    Returns
    -------
    float or numpy.ndarray
    """
    if not 0.0 < beta <= 1.0:
        raise InvalidParameterError(f"beta must lie in (0, 1], got {beta}")
    ax = np.abs(np.asarray(x, dtype=float))
    out = np.where(ax <= 1.0, 1.0 - np.minimum(ax, 1.0) ** beta, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Kernel:
    """Nonnegative kernel with ``psi(0) = 1`` and support in [-1, 1].

    Use the constructors :meth:`psi_beta`, :meth:`triangle`,
    :meth:`tabulated` and :meth:`smooth_bump` rather than the raw
    initialiser.

    Attributes
    ----------
    form : str
        One of ``FORMS``.
    beta : float or None
        Exponent of the optimal recovery kernel.
    values : tuple of float or None
        Tabulated values on a uniform grid over ``[-half_width, half_width]``.
    half_width : float
        Extent of the tabulation grid (values beyond 1 must vanish for a
        valid kernel; keeping them lets validation catch the violation).
    holder_beta : float
        Hoelder exponent for which the constant is one.
    tv_bound : float
        Total variation.
    """

    form: str
    beta: float | None = None
    values: tuple[float, ...] | None = field(default=None, repr=False)
    half_width: float = 1.0
    holder_beta: float = 1.0
    tv_bound: float = 2.0

    def __post_init__(self):
        if self.form not in FORMS:
            raise InvalidParameterError(f"unknown kernel form {self.form!r}")
        if self.form == "optimal_recovery":
            if self.beta is None or not 0.0 < self.beta <= 1.0:
                raise InvalidParameterError(
                    f"optimal recovery kernel needs beta in (0, 1], got {self.beta}"
                )
            object.__setattr__(self, "holder_beta", float(self.beta))
        elif self.form == "triangle":
            object.__setattr__(self, "beta", 1.0)
            object.__setattr__(self, "holder_beta", 1.0)
        elif self.form == "tabulated":
            if self.values is None or len(self.values) < 2:
                raise InvalidParameterError("tabulated kernel needs at least two values")
            vals = np.asarray(self.values, dtype=float)
            if not np.all(np.isfinite(vals)):
                raise InvalidParameterError("tabulated kernel values must be finite")
            object.__setattr__(self, "values", tuple(float(v) for v in vals))
            tv = abs(vals[0]) + float(np.abs(np.diff(vals)).sum()) + abs(vals[-1])
            object.__setattr__(self, "tv_bound", tv)

    # constructors -------------------------------------------------------

    @classmethod
    def psi_beta(cls, beta):
        return cls(form="optimal_recovery", beta=float(beta))

    @classmethod
    def triangle(cls):
        return cls(form="triangle")

    @classmethod
    def tabulated(cls, values, half_width=1.0, holder_beta=1.0):
        """Piecewise-linear kernel through ``values`` on a uniform grid."""
        return cls(
            form="tabulated",
            values=tuple(values),
            half_width=float(half_width),
            holder_beta=float(holder_beta),
        )

    @classmethod
    def tabulate(cls, func, points=MIN_TABULATED_POINTS + 1, half_width=1.0, holder_beta=1.0):
        """Sample ``func`` on a uniform grid and return the tabulated kernel."""
        grid = np.linspace(-half_width, half_width, points)
        return cls.tabulated(np.asarray(func(grid), dtype=float), half_width, holder_beta)

    @classmethod
    def smooth_bump(cls):
        """C-infinity bump ``exp(1 - 1 / (1 - x**2))`` with peak one.

        Its slope reaches 2.17, so the constant-one Hoelder property only
        holds for small exponents (0.25 passes the dyadic check).  Meant for
        the smooth alternatives, not as a scan kernel.
        """
        return cls(form="smooth_bump", holder_beta=0.25)

    # config round trip --------------------------------------------------

    @classmethod
    def from_config(cls, cfg):
        try:
            form = cfg["form"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"kernel config needs a 'form' key: {cfg!r}") from exc
        if form == "optimal_recovery":
            return cls.psi_beta(cfg["beta"])
        if form == "triangle":
            return cls.triangle()
        if form == "tabulated":
            return cls.tabulated(
                cfg["values"], cfg.get("half_width", 1.0), cfg.get("holder_beta", 1.0)
            )
        if form == "smooth_bump":
            return cls.smooth_bump()
        raise SchemaError(f"unknown kernel form {form!r}")

    def to_config(self):
        if self.form == "optimal_recovery":
            return {"form": self.form, "beta": self.beta}
        if self.form == "tabulated":
            return {
                "form": self.form,
                "values": list(self.values),
                "half_width": self.half_width,
                "holder_beta": self.holder_beta,
            }
        return {"form": self.form}

    # evaluation ---------------------------------------------------------

    @property
    def closed_form(self):
        """True when cell integrals of psi and psi**2 are exact."""
        return self.form != "smooth_bump"

    @property
    def _power(self):
        return 1.0 if self.form == "triangle" else self.beta

    def _grid(self):
        vals = np.asarray(self.values)
        return np.linspace(-self.half_width, self.half_width, vals.size), vals

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.form in ("optimal_recovery", "triangle"):
            ax = np.abs(x)
            out = np.where(ax <= 1.0, 1.0 - np.minimum(ax, 1.0) ** self._power, 0.0)
        elif self.form == "tabulated":
            grid, vals = self._grid()
            out = np.interp(x, grid, vals, left=0.0, right=0.0)
        else:
            inside = np.abs(x) < 1.0
            xs = np.where(inside, x, 0.0)
            out = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - xs * xs)), 0.0)
        return float(out) if out.ndim == 0 else out

    def primitive(self, u):
        """``int_{-inf}^{u} psi``; closed-form kernels only."""
        u = np.asarray(u, dtype=float)
        if self.form in ("optimal_recovery", "triangle"):
            p = self._power
            uc = np.clip(u, -1.0, 1.0)
            return uc + 1.0 - (1.0 + np.sign(uc) * np.abs(uc) ** (p + 1.0)) / (p + 1.0)
        if self.form == "tabulated":
            return self._tab_primitive(u, squared=False)
        raise NotImplementedError("smooth bump has no closed-form primitive")

    def primitive_sq(self, u):
        """``int_{-inf}^{u} psi**2``; closed-form kernels only."""
        u = np.asarray(u, dtype=float)
        if self.form in ("optimal_recovery", "triangle"):
            p = self._power
            uc = np.clip(u, -1.0, 1.0)
            s = np.sign(uc)
            au = np.abs(uc)
            return (
                uc
                + 1.0
                - 2.0 * (1.0 + s * au ** (p + 1.0)) / (p + 1.0)
                + (1.0 + s * au ** (2.0 * p + 1.0)) / (2.0 * p + 1.0)
            )
        if self.form == "tabulated":
            return self._tab_primitive(u, squared=True)
        raise NotImplementedError("smooth bump has no closed-form primitive")

    def _tab_primitive(self, u, squared):
        grid, vals = self._grid()
        dx = grid[1] - grid[0]
        a, b = vals[:-1], vals[1:]
        seg = dx * (a * a + a * b + b * b) / 3.0 if squared else dx * (a + b) / 2.0
        cum = np.concatenate(([0.0], np.cumsum(seg)))
        uc = np.clip(u, grid[0], grid[-1])
        idx = np.clip(((uc - grid[0]) / dx).astype(np.int64), 0, vals.size - 2)
        d = uc - grid[idx]
        v0 = vals[idx]
        s = (vals[idx + 1] - v0) / dx
        if squared:
            part = v0 * v0 * d + v0 * s * d * d + s * s * d**3 / 3.0
        else:
            part = v0 * d + 0.5 * s * d * d
        return cum[idx] + part

    def _gauss_legendre(self, a, b, squared):
        lo = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        hi = np.clip(np.asarray(b, dtype=float), -1.0, 1.0)
        sign = np.where(hi >= lo, 1.0, -1.0)
        lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        width = (hi - lo) / _GL_PANELS
        total = np.zeros(np.broadcast(lo, hi).shape)
        for p in range(_GL_PANELS):
            left = lo + p * width
            x = left[..., None] + 0.5 * width[..., None] * (_GL_NODES + 1.0)
            fx = self(x)
            if squared:
                fx = fx * fx
            total = total + 0.5 * width * (fx * _GL_WEIGHTS).sum(axis=-1)
        return sign * total

    def integral(self, a, b):
        """Vectorised ``int_a^b psi``."""
        if self.closed_form:
            return self.primitive(b) - self.primitive(a)
        return self._gauss_legendre(a, b, squared=False)

    def integral_sq(self, a, b):
        """Vectorised ``int_a^b psi**2``."""
        if self.closed_form:
            return self.primitive_sq(b) - self.primitive_sq(a)
        return self._gauss_legendre(a, b, squared=True)

    def total_integral(self):
        """``int psi`` over the real line."""
        if self.form in ("optimal_recovery", "triangle"):
            p = self._power
            return 2.0 * p / (p + 1.0)
        lim = max(1.0, self.half_width)
        return float(self.integral(-lim, lim))


@dataclass(frozen=True)
class KernelConstants:
    """Half-level radius ``c_beta``, grid constant ``K_psi = 3 / c_beta`` and L2 norm."""

    c_beta: float
    k_psi: float
    l2_norm_sq: float


def half_level_radius(kernel):
    """Largest ``c`` with ``psi >= 1/2`` on ``[-c, c]``."""
    if kernel.form in ("optimal_recovery", "triangle"):
        return 2.0 ** (-1.0 / kernel._power)
    if kernel.form == "smooth_bump":
        return math.sqrt(math.log(2.0) / (1.0 + math.log(2.0)))
    grid, vals = kernel._grid()
    radii = []
    for side in (1.0, -1.0):
        mask = side * grid >= 0
        xs = np.concatenate(([0.0], np.abs(grid[mask])))
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ys = np.concatenate(([kernel(0.0)], vals[mask]))[order]
        below = np.flatnonzero(ys < 0.5)
        if below.size == 0:
            radii.append(float(xs[-1]))
            continue
        i = below[0]
        if i == 0:
            radii.append(0.0)
            continue
        x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
        radii.append(float(x0 + (y0 - 0.5) * (x1 - x0) / (y0 - y1)))
    return min(radii)


def grid_constant(kernel):
    """``K_psi = 3 / c_beta``: smallest admissible bandwidth is ``K_psi / n``."""
    return 3.0 / half_level_radius(kernel)


def kernel_l2_norm_sq(kernel):
    """``int psi**2``; closed form for power kernels, exact for tabulated ones."""
    if kernel.form in ("optimal_recovery", "triangle"):
        p = kernel._power
        return 2.0 * (1.0 - 2.0 / (p + 1.0) + 1.0 / (2.0 * p + 1.0))
    lim = max(1.0, kernel.half_width)
    return float(kernel.integral_sq(-lim, lim))


def quadrature_l2_norm_sq(kernel):
    """Adaptive-quadrature value of ``int psi**2`` (independent of the primitives)."""
    def f(x):
        return float(kernel(x)) ** 2

    if kernel.form == "tabulated":
        # kinks at every knot: integrate span by span
        grid, _ = kernel._grid()
        return sum(
            integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13)[0]
            for lo, hi in zip(grid[:-1], grid[1:])
        )
    lim = max(1.0, kernel.half_width)
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=200)
    return integrate.quad(f, -lim, 0.0, **opts)[0] + integrate.quad(f, 0.0, lim, **opts)[0]


def kernel_constants(kernel):
    c = half_level_radius(kernel)
    return KernelConstants(c_beta=c, k_psi=3.0 / c, l2_norm_sq=kernel_l2_norm_sq(kernel))


@dataclass
class KernelReport:
    """Outcome of :func:`validate_kernel`; ``failures`` names the failed checks."""

    checks: dict
    details: dict

    @property
    def failures(self):
        return [name for name, ok in self.checks.items() if not ok]

    @property
    def passed(self):
        return not self.failures


def validate_kernel(kernel, tol=1e-9, levels=12):
    """Check support, peak, bounds, sign, Hoelder-one property and variation.

    The Hoelder check compares grid points at dyadic separations only,
    ``2**j`` grid steps for ``j = 0..levels``, on a grid with ``2**levels``
    cells per unit length.  Never raises; inspect the returned report.
    """
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    lim = max(1.0, kernel.half_width)
    cells = int(2**levels * lim)
    x = np.linspace(-lim, lim, 2 * cells + 1)
    v = np.asarray(kernel(x), dtype=float)
    dx = x[1] - x[0]
    outside = np.abs(x) > 1.0 + 1e-12
    details = {
        "peak": float(kernel(0.0)),
        "max": float(v.max()),
        "min": float(v.min()),
        "outside_max": float(np.abs(v[outside]).max()) if outside.any() else 0.0,
    }
    worst = 0.0
    for j in range(int(math.log2(2 * cells)) + 1):
        s = 2**j
        if s >= v.size:
            break
        excess = np.abs(v[s:] - v[:-s]) - (s * dx) ** kernel.holder_beta
        worst = max(worst, float(excess.max()))
    tv = float(np.abs(np.diff(v)).sum() + abs(v[0]) + abs(v[-1]))
    details["holder_excess"] = worst
    details["total_variation"] = tv
    checks = {
        "support": details["outside_max"] <= tol,
        "peak": abs(details["peak"] - 1.0) <= tol,
        "bounded": details["max"] <= 1.0 + tol,
        "nonnegative": details["min"] >= -tol,
        "holder": worst <= tol,
        "total_variation": math.isfinite(tv),
    }
    return KernelReport(checks=checks, details=details)
