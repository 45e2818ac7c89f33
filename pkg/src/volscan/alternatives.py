"""Hoelder classes, detection rates and the local alternatives of the lower bound.

For ``beta <= 1`` the alternatives perturb ``sigma`` itself,
``sigma = 1 + (L/2) a h**beta psi_beta((t - t_j) / h)`` with amplitude factor
``a = 1 - eps_n`` and bandwidth ``h = h_n^b``.  The tuning parameter ``b`` is
chosen so that the deviation at the bump centre equals ``a c_* rho_n``.
Replacing ``a`` by a multiplier ``m`` gives the power alternatives used by the
studies (deviation ``m c_* rho_n``).

For ``beta > 1`` the alternatives perturb ``sigma**2`` with a smooth bump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, InvalidParameterError, NoRootError
from .kernel import Kernel, kernel_l2_norm_sq
from .model import Bump, VolatilityFunction

DEFAULT_J = (0.05, 0.95)
BRACKET = (0.25, 4.0)
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class HolderClass:
    beta: float
    L: float

    def __post_init__(self):
        if not (self.beta > 0 and self.L > 0):
            raise InvalidParameterError("beta and L must be positive")

    @property
    def derivative_order(self):
        """Order ``k`` of the derivative whose ``(beta - k)``-Hoelder constant is bounded."""
        return max(int(math.ceil(self.beta)) - 1, 0)


@dataclass(frozen=True)
class RateConstants:
    n: int
    rho_n: float
    c_star: float
    epsilon_n: float


def rate_rho(n, beta):
    """``(log n / n)**(beta / (2 beta + 1))``."""
    if n < 2:
        raise InvalidParameterError("n must be at least 2")
    return (math.log(n) / n) ** (beta / (2.0 * beta + 1.0))


def _psi_constants(beta):
    k = Kernel.psi_beta(beta)
    return k.total_integral(), kernel_l2_norm_sq(k)


def constant_c_star(beta, L, kernel_l2_sq=None):
    """Sharp constant ``(4 L**(1/beta) / ((2 beta + 1) ||psi_beta||**2))**(beta / (2 beta + 1))``."""
    if not 0.0 < beta <= 1.0:
        raise InvalidParameterError("the sharp constant needs beta in (0, 1]")
    if kernel_l2_sq is None:
        kernel_l2_sq = _psi_constants(beta)[1]
    return (4.0 * L ** (1.0 / beta) / ((2.0 * beta + 1.0) * kernel_l2_sq)) ** (
        beta / (2.0 * beta + 1.0)
    )


def default_epsilon(n):
    """``(log n)**(-1/4)``."""
    return math.log(n) ** -0.25


def rate_constants(n, beta, L, epsilon_n=None):
    return RateConstants(
        n=n,
        rho_n=rate_rho(n, beta),
        c_star=constant_c_star(beta, L),
        epsilon_n=default_epsilon(n) if epsilon_n is None else epsilon_n,
    )


def bandwidth_h_b(beta, L, n, b):
    """``(c_*/L)**(1/beta) (log n / (b n))**(1 / (2 beta + 1))``."""
    if b <= 0:
        raise InvalidParameterError("b must be positive")
    c = constant_c_star(beta, L)
    return (c / L) ** (1.0 / beta) * (math.log(n) / (b * n)) ** (1.0 / (2.0 * beta + 1.0))


def bump_count(J, h, n, radius=1.0):
    """``floor((J2 - J1) / (2 R (h + 1/n)))``."""
    return int(math.floor((J[1] - J[0]) / (2.0 * radius * (h + 1.0 / n)) + 1e-12))


def bump_centers(J, h, n, radius=1.0):
    """``J1 + (2j - 1) R (h + 1/n)`` for ``j = 1..N_n``."""
    N = bump_count(J, h, n, radius)
    return tuple(J[0] + (2 * j - 1) * radius * (h + 1.0 / n) for j in range(1, N + 1))


def _check_J(J):
    if not 0.0 < J[0] < J[1] < 1.0:
        raise InvalidParameterError(f"J must be a proper subinterval of (0, 1), got {J}")


@dataclass(frozen=True)
class AlternativeSpec:
    """One family of local alternatives and its construction metadata."""

    holder: HolderClass
    n: int
    J: tuple
    b: float
    h: float
    centers: tuple
    amplitude_factor: float
    form: str
    kernel: Kernel = field(repr=False)
    amplitude_scale: float = 1.0

    @property
    def count(self):
        return len(self.centers)

    def volatility(self, j=None):
        """Alternative ``j`` (1-based; defaults to the middle bump)."""
        if self.count < 1:
            raise ConstructionError("no bump fits into J for these parameters")
        j = (self.count + 1) // 2 if j is None else j
        if not 1 <= j <= self.count:
            raise InvalidParameterError(f"j must lie in 1..{self.count}")
        beta, L = self.holder.beta, self.holder.L
        if self.form == "sigma_form":
            amp = 0.5 * L * self.amplitude_factor * self.h**beta
            target = "sigma"
        else:
            amp = L * self.amplitude_factor * self.h**beta * self.amplitude_scale
            target = "sigma_squared"
        if amp == 0:
            return VolatilityFunction.constant(1.0)
        bump = Bump(amplitude=amp, center=self.centers[j - 1], bandwidth=self.h,
                    kernel=self.kernel, target=target)
        return VolatilityFunction(baseline=1.0, bumps=(bump,))

    def to_config(self, j=None):
        cfg = self.volatility(j).to_config()
        cfg["alternative"] = {
            "beta": self.holder.beta, "L": self.holder.L, "J": list(self.J),
            "b": self.b, "j": (self.count + 1) // 2 if j is None else j, "n": self.n,
        }
        return cfg


def alternative_spec(beta, L, n, epsilon_n=None, J=DEFAULT_J, b=1.0, amplitude_factor=None):
    """Construction data for the hypotheses at given ``b``.

    ``amplitude_factor`` defaults to ``1 - epsilon_n``.
    """
    holder = HolderClass(beta, L)
    _check_J(J)
    eps = default_epsilon(n) if epsilon_n is None else epsilon_n
    a = 1.0 - eps if amplitude_factor is None else amplitude_factor
    if beta <= 1.0:
        h = bandwidth_h_b(beta, L, n, b)
        return AlternativeSpec(holder, n, tuple(J), b, h, bump_centers(J, h, n), a,
                               "sigma_form", Kernel.psi_beta(beta))
    kern = Kernel.smooth_bump()
    h = smooth_bandwidth(beta, L, n)
    scale = 1.0 / bump_holder_constant(holder.derivative_order, beta - holder.derivative_order)
    return AlternativeSpec(holder, n, tuple(J), b, h, bump_centers(J, h, n), a,
                           "sigma_sq_form", kern, amplitude_scale=scale)


def build_alternative(beta, L, n, epsilon_n=None, J=DEFAULT_J, b=1.0, j=None):
    """Volatility of hypothesis ``j`` (raises ConstructionError when ``N_n = 0``)."""
    spec = alternative_spec(beta, L, n, epsilon_n, J, b)
    if spec.count < 1:
        raise ConstructionError(f"J={J} is too short for one bump of bandwidth {spec.h:.4g}")
    return spec.volatility(j)


# ---------------------------------------------------------------------------
# centre ratio and its root in b


def center_deviation(beta, L, n, b, amplitude_factor):
    """``sigma(t_j)**2 / ||sigma||**2 - 1`` from the closed-form norm."""
    int_psi, l2 = _psi_constants(beta)
    h = bandwidth_h_b(beta, L, n, b)
    a = 0.5 * L * amplitude_factor * h**beta
    peak = (1.0 + a) ** 2
    norm = 1.0 + 2.0 * a * h * int_psi + a * a * h * l2
    return peak / norm - 1.0


def eval_F(x, y, z, beta, L):
    """Implicit-function form of the centre-ratio equation in ``(h_n^1, eps h**beta, b)``."""
    if z <= 0:
        raise InvalidParameterError("z must be positive")
    int_psi, l2 = _psi_constants(beta)
    p = 2.0 * beta + 1.0
    z1 = z ** (-(beta + 1.0) / p)
    z2 = z ** (-2.0 * beta / p)
    return (
        z ** (-beta / p)
        - 1.0
        + (-x * z1 + L * z1 * (x * y - x ** (1.0 + beta))) * int_psi
        + 0.25 * L * (1.0 - x * z ** (-1.0 / p) * l2) * (x**beta * z2 - y * z2)
        - 0.25 * L**2 * l2 * (x**p / z - 2.0 * y * x ** (1.0 + beta) / z + x * y * y / z)
    )


@dataclass
class SolveResult:
    b: float
    residual: float
    iterations: int
    bracket: tuple
    target: float

    def to_json(self):
        return {"b": self.b, "residual": self.residual, "iterations": self.iterations,
                "bracket": list(self.bracket), "target": self.target}


def solve_b(beta, L, n, epsilon_n=None, amplitude_factor=None, target=None, full=False):
    """Root ``b_n`` of ``|centre deviation(b)| = target`` by bracketed bisection.

    Defaults reproduce the lower-bound construction: amplitude factor
    ``1 - eps_n`` and target ``(1 - eps_n) c_* rho_n``.  The bracket starts at
    ``[1/4, 4]`` and is widened by squaring its ends at most twice.
    """
    if not 0.0 < beta <= 1.0:
        raise InvalidParameterError("solve_b needs beta in (0, 1]")
    eps = default_epsilon(n) if epsilon_n is None else epsilon_n
    a = 1.0 - eps if amplitude_factor is None else amplitude_factor
    goal = a * constant_c_star(beta, L) * rate_rho(n, beta) if target is None else target

    def g(b):
        return abs(center_deviation(beta, L, n, b, a)) - goal

    lo, hi = BRACKET
    tried = []
    for _ in range(3):
        glo, ghi = g(lo), g(hi)
        tried.append({"bracket": [lo, hi], "g": [glo, ghi]})
        if glo == 0.0:
            return _finish(lo, 0.0, 0, (lo, hi), goal, full)
        if ghi == 0.0:
            return _finish(hi, 0.0, 0, (lo, hi), goal, full)
        if (glo > 0) != (ghi > 0):
            break
        lo, hi = lo / 2.0, hi * 2.0
    else:
        raise NoRootError("no sign change of the centre-ratio equation", {"tried": tried})
    bracket = (lo, hi)
    best, best_val = lo, glo
    for it in range(1, 400):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < abs(best_val):
            best, best_val = mid, gm
        if gm == 0.0 or hi - lo <= 4.0 * np.spacing(mid):
            break
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    if abs(best_val) >= RESIDUAL_TOL:
        raise NoRootError("bisection stalled above the residual tolerance",
                          {"tried": tried, "b": best, "residual": best_val})
    return _finish(best, best_val, it, bracket, goal, full)


def _finish(b, residual, iterations, bracket, goal, full):
    res = SolveResult(b=b, residual=abs(residual), iterations=iterations,
                      bracket=bracket, target=goal)
    return res if full else b


def solved_alternative(beta, L, n, epsilon_n=None, J=DEFAULT_J, j=None):
    """Lower-bound hypothesis with ``b = b_n``."""
    b = solve_b(beta, L, n, epsilon_n)
    return build_alternative(beta, L, n, epsilon_n, J, b, j)


def solve_amplitude(beta, L, n, b, target):
    """Amplitude factor ``a`` with centre deviation ``target`` at fixed ``b``."""
    def g(a):
        return center_deviation(beta, L, n, b, a) - target

    lo, hi = 0.0, 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise NoRootError("centre deviation cannot reach the target", {"b": b, "target": target})
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4.0 * np.spacing(hi):
            break
    return 0.5 * (lo + hi)


def multiplier_alternative(beta, L, n, m, J=DEFAULT_J, j=None):
    """Alternative with deviation ``d_J = m c_* rho_n``.

    The amplitude factor ``1 - eps_n`` of the lower-bound family is replaced
    by ``m`` and ``b`` is solved as usual.  When the bump mass keeps the centre
    ratio below the target for every ``b`` (small ``L`` at moderate ``n``),
    ``b = 1`` is kept and the amplitude factor is solved instead; the result
    then lies in a larger Hoelder ball, which :func:`holder_membership` reports.
    """
    if m < 0:
        raise InvalidParameterError("multiplier must be nonnegative")
    if m == 0:
        return VolatilityFunction.constant(1.0)
    goal = m * constant_c_star(beta, L) * rate_rho(n, beta)
    try:
        b = solve_b(beta, L, n, amplitude_factor=m, target=goal)
        a = m
    except NoRootError:
        b = 1.0
        a = solve_amplitude(beta, L, n, b, goal)
    spec = alternative_spec(beta, L, n, J=J, b=b, amplitude_factor=a)
    if spec.count < 1:
        raise ConstructionError(f"J={J} is too short for one bump of bandwidth {spec.h:.4g}")
    return spec.volatility(j)


# ---------------------------------------------------------------------------
# smooth bump for beta > 1


def bump_derivative_polys(order):
    """Polynomials ``P_m`` with ``psi^(m) = P_m psi / (1 - x**2)**(2m)``."""
    P = np.polynomial.Polynomial
    Q = P([1.0, 0.0, -1.0])
    dQ = Q.deriv()
    x = P([0.0, 1.0])
    polys = [P([1.0])]
    for m in range(order):
        pm = polys[-1]
        polys.append((pm.deriv() * Q - 2 * m * pm * dQ) * Q - 2 * x * pm)
    return polys


def bump_derivative(order, x):
    """``order``-th derivative of the smooth bump."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    xs = np.where(inside, x, 0.0)
    q = 1.0 - xs * xs
    psi = np.exp(1.0 - 1.0 / q)
    val = bump_derivative_polys(order)[-1](xs) * psi / q ** (2 * order)
    return np.where(inside, val, 0.0)


def _dyadic_quotient(values, dx, gamma):
    worst = 0.0
    s = 1
    while s < values.size:
        diff = np.abs(values[s:] - values[:-s])
        q = diff.max() / (s * dx) ** gamma if gamma > 0 else diff.max()
        worst = max(worst, float(q))
        s *= 2
    return worst


def bump_holder_constant(order, gamma, levels=14):
    """Dyadic-grid Hoelder constant of the ``order``-th bump derivative."""
    x = np.linspace(-1.0, 1.0, 2 * 2**levels + 1)
    return _dyadic_quotient(bump_derivative(order, x), x[1] - x[0], gamma)


def smooth_bandwidth(beta, L, n):
    """Bandwidth of the ``sigma**2`` alternatives for ``beta > 1``.

    Uses exponent ``1/beta`` on the constant so that
    ``h**beta = 4**(beta/(2beta+1)) c rho_n / L``.
    """
    l2 = kernel_l2_norm_sq(Kernel.smooth_bump())
    c = (L ** (1.0 / beta) / ((2.0 * beta + 1.0) * l2)) ** (beta / (2.0 * beta + 1.0))
    return (4.0 ** (beta / (2.0 * beta + 1.0)) * c / L) ** (1.0 / beta) * (
        math.log(n) / n
    ) ** (1.0 / (2.0 * beta + 1.0))


# ---------------------------------------------------------------------------
# distance and Hoelder membership


def distance_dJ(sigma, J, n=None):
    """``sup_{t in J} |sigma(t)**2 / ||sigma||**2 - 1|``.

    Bump forms evaluate the centres, support edges and ends of ``J`` plus a
    sweep with step ``min bandwidth / 10`` (floored at ``1/(10n)`` when ``n``
    is given).  For tabulated ``sigma`` the ratio is monotone between knots, so
    knots inside ``J`` and the ends of ``J`` give the exact supremum.
    """
    J1, J2 = J
    norm = sigma.l2_norm_sq()
    pts = [J1, J2]
    if sigma.tabulated is not None:
        knots = np.linspace(0.0, 1.0, len(sigma.tabulated))
        pts.extend(knots[(knots > J1) & (knots < J2)])
    elif sigma.bumps:
        step = min(b.bandwidth for b in sigma.bumps) / 10.0
        if n is not None:
            step = max(step, 1.0 / (10.0 * n))
        pts.extend(np.linspace(J1, J2, int(math.ceil((J2 - J1) / step)) + 1))
        for b in sigma.bumps:
            lo, hi = b.support
            pts.extend([b.center, lo, hi])
    t = np.asarray(pts, dtype=float)
    t = t[(t >= J1) & (t <= J2)]
    return float(np.max(np.abs(sigma.sigma_sq(t) / norm - 1.0)))


@dataclass
class HolderReport:
    quotient: float
    L: float
    margin: float
    member: bool
    order: int
    note: str = ""


def holder_membership(sigma, beta, L, tol=1e-9, levels=16):
    """Hoelder check of ``f = sigma**2 / ||sigma||**2`` on dyadic grid pairs.

    For ``beta <= 1`` the difference quotient of ``f`` itself is checked on a
    uniform grid with ``2**levels`` cells and additionally at dyadic offsets
    from every bump centre.  For ``beta > 1`` the derivative of order
    ``ceil(beta) - 1`` is computed analytically for ``sigma**2`` bumps built
    from the smooth bump.
    """
    holder = HolderClass(beta, L)
    k = holder.derivative_order
    gamma = beta - k
    norm = sigma.l2_norm_sq()
    if sigma.is_constant:
        return HolderReport(0.0, L, L, True, k)
    if k == 0:
        x = np.linspace(0.0, 1.0, 2**levels + 1)
        q = _dyadic_quotient(sigma.sigma_sq(x) / norm, x[1] - x[0], gamma)
        offsets = 2.0 ** -np.arange(1, levels + 8)
        for b in sigma.bumps:
            c = b.center
            f0 = float(sigma.sigma_sq(c)) / norm
            for sgn in (1.0, -1.0):
                y = np.clip(c + sgn * offsets, 0.0, 1.0)
                ok = y != c
                diff = np.abs(sigma.sigma_sq(y[ok]) / norm - f0)
                q = max(q, float(np.max(diff / np.abs(y[ok] - c) ** gamma)))
        return HolderReport(q, L, L - q, q <= L * (1.0 + tol), k)
    if sigma.tabulated is not None or any(
        b.target != "sigma_squared" or b.kernel.form != "smooth_bump" for b in sigma.bumps
    ):
        return HolderReport(math.inf, L, -math.inf, False, k,
                            note="derivative check needs sigma**2 bumps built from the smooth bump")
    x = np.linspace(0.0, 1.0, 2**levels + 1)
    deriv = np.zeros_like(x)
    for b in sigma.bumps:
        deriv += b.amplitude * b.bandwidth**-k * bump_derivative(k, (x - b.center) / b.bandwidth)
    q = _dyadic_quotient(deriv / norm, x[1] - x[0], gamma)
    return HolderReport(q, L, L - q, q <= L * (1.0 + tol), k)
