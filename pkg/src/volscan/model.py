"""Volatility functions and exact simulation of the discretely observed model.

Under ``dZ_t = sigma(t) dW_t`` the increment over cell ``k`` is centred
Gaussian with variance ``int_{(k-1)/n}^{k/n} sigma**2``, so increments are
drawn directly from that law.  Integrated variances are computed from kernel
primitives whenever the bump configuration allows it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import InvalidParameterError, SchemaError
from .kernel import Kernel

TARGETS = ("sigma", "sigma_squared")


@dataclass(frozen=True)
class Bump:
    """``amplitude * psi((t - center) / bandwidth)`` added to ``sigma`` or ``sigma**2``."""

    amplitude: float
    center: float
    bandwidth: float
    kernel: Kernel
    target: str = "sigma"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InvalidParameterError(f"bump target must be one of {TARGETS}")
        if self.bandwidth <= 0:
            raise InvalidParameterError("bump bandwidth must be positive")
        lo, hi = self.support
        if lo < -1e-12 or hi > 1.0 + 1e-12:
            raise InvalidParameterError(
                f"bump support [{lo}, {hi}] leaves [0, 1]"
            )

    @property
    def support(self):
        w = self.bandwidth * max(1.0, self.kernel.half_width)
        return self.center - w, self.center + w

    def __call__(self, t):
        return self.amplitude * self.kernel((np.asarray(t, dtype=float) - self.center) / self.bandwidth)

    def to_config(self):
        return {
            "amplitude": self.amplitude,
            "center": self.center,
            "bandwidth": self.bandwidth,
            "kernel": self.kernel.to_config(),
            "target": self.target,
        }


@dataclass(frozen=True)
class VolatilityFunction:
    """Positive volatility ``sigma`` on [0, 1].

    ``sigma**2 = (baseline + sum of sigma-bumps)**2 + sum of sigma_squared-bumps``,
    or, when ``tabulated`` is given, the linear interpolant of the tabulated
    values of ``sigma`` on a uniform grid over [0, 1].
    """

    baseline: float = 1.0
    bumps: tuple[Bump, ...] = ()
    tabulated: tuple[float, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if self.tabulated is not None:
            if self.bumps:
                raise InvalidParameterError("tabulated sigma cannot carry bumps")
            vals = np.asarray(self.tabulated, dtype=float)
            if vals.size < 2 or np.any(vals <= 0) or not np.all(np.isfinite(vals)):
                raise InvalidParameterError("tabulated sigma needs >= 2 positive finite values")
            object.__setattr__(self, "tabulated", tuple(float(v) for v in vals))
        elif not self.baseline > 0:
            raise InvalidParameterError(f"baseline must be positive, got {self.baseline}")
        self.check_positive()

    @classmethod
    def constant(cls, c):
        return cls(baseline=float(c))

    @classmethod
    def from_config(cls, cfg):
        try:
            if "tabulated" in cfg:
                return cls(tabulated=tuple(cfg["tabulated"]))
            bumps = tuple(
                Bump(
                    amplitude=float(b["amplitude"]),
                    center=float(b["center"]),
                    bandwidth=float(b["bandwidth"]),
                    kernel=Kernel.from_config(b["kernel"]),
                    target=b.get("target", "sigma"),
                )
                for b in cfg.get("bumps", ())
            )
            return cls(baseline=float(cfg["baseline"]), bumps=bumps)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed volatility config: {exc}") from exc

    def to_config(self):
        if self.tabulated is not None:
            return {"tabulated": list(self.tabulated)}
        return {"baseline": self.baseline, "bumps": [b.to_config() for b in self.bumps]}

    # pointwise ----------------------------------------------------------

    @property
    def is_constant(self):
        if self.tabulated is not None:
            return len(set(self.tabulated)) == 1
        return all(b.amplitude == 0 for b in self.bumps)

    def sigma_sq(self, t):
        t = np.asarray(t, dtype=float)
        if self.tabulated is not None:
            vals = np.asarray(self.tabulated)
            return np.interp(t, np.linspace(0.0, 1.0, vals.size), vals) ** 2
        s = np.full(t.shape, float(self.baseline))
        extra = np.zeros(t.shape)
        for b in self.bumps:
            if b.target == "sigma":
                s = s + b(t)
            else:
                extra = extra + b(t)
        return s * s + extra

    def __call__(self, t):
        return np.sqrt(self.sigma_sq(t))

    def breakpoints(self):
        """Points where sigma**2 may fail to be smooth or monotone."""
        if self.tabulated is not None:
            return np.linspace(0.0, 1.0, len(self.tabulated))
        pts = [0.0, 1.0]
        for b in self.bumps:
            lo, hi = b.support
            pts += [lo, b.center, hi]
        return np.unique(np.clip(pts, 0.0, 1.0))

    def check_positive(self, n=4096):
        """Raise unless ``sigma**2 > 0`` on a ``16 n`` grid plus bump endpoints."""
        t = np.union1d(np.linspace(0.0, 1.0, 16 * n + 1), self.breakpoints())
        s2 = self.sigma_sq(t)
        if self.tabulated is None:
            s = np.full(t.shape, float(self.baseline))
            for b in self.bumps:
                if b.target == "sigma":
                    s = s + b(t)
            if np.any(s <= 0):
                raise InvalidParameterError("sigma must stay positive on [0, 1]")
        if np.any(s2 <= 0):
            raise InvalidParameterError("sigma**2 must stay positive on [0, 1]")

    # integrals ----------------------------------------------------------

    def _sigma_bumps_disjoint(self):
        spans = sorted(b.support for b in self.bumps if b.target == "sigma" and b.amplitude != 0)
        return all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    @property
    def exact(self):
        """True when cell integrals of sigma**2 have closed forms."""
        if self.tabulated is not None:
            return True
        return self._sigma_bumps_disjoint() and all(b.kernel.closed_form for b in self.bumps)

    def cell_integrals(self, edges):
        """``int sigma**2`` over consecutive cells delimited by ``edges``."""
        edges = np.asarray(edges, dtype=float)
        a, b = edges[:-1], edges[1:]
        if self.tabulated is not None:
            return _tabulated_cell_integrals(np.asarray(self.tabulated), edges)
        if not self._sigma_bumps_disjoint():
            return _quad_cell_integrals(self, edges)
        c = float(self.baseline)
        out = c * c * (b - a)
        for bump in self.bumps:
            h = bump.bandwidth
            ua, ub = (a - bump.center) / h, (b - bump.center) / h
            first = bump.amplitude * h * bump.kernel.integral(ua, ub)
            if bump.target == "sigma":
                second = bump.amplitude**2 * h * bump.kernel.integral_sq(ua, ub)
                out = out + 2.0 * c * first + second
            else:
                out = out + first
        return out

    def l2_norm_sq(self):
        """``int_0^1 sigma**2``, from whole-kernel integrals when possible."""
        if not self.exact:
            return float(_quad_cell_integrals(self, np.array([0.0, 1.0]))[0])
        if self.tabulated is not None:
            return float(self.cell_integrals([0.0, 1.0])[0])
        c = float(self.baseline)
        total = c * c
        from .kernel import kernel_l2_norm_sq

        for bump in self.bumps:
            h = bump.bandwidth
            mass = bump.kernel.total_integral()
            if bump.target == "sigma":
                total += 2.0 * c * bump.amplitude * h * mass
                total += bump.amplitude**2 * h * kernel_l2_norm_sq(bump.kernel)
            else:
                total += bump.amplitude * h * mass
        return total


def _quad_cell_integrals(sigma, edges, epsabs=1e-12):
    bp = sigma.breakpoints()
    out = np.empty(len(edges) - 1)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        inner = bp[(bp > a) & (bp < b)]
        out[i] = integrate.quad(
            lambda s: float(sigma.sigma_sq(s)), a, b, points=inner if inner.size else None,
            epsabs=epsabs, epsrel=1e-12, limit=200,
        )[0]
    return out


def _tabulated_cell_integrals(vals, edges):
    # sigma is linear between knots, so sigma**2 is quadratic and Simpson is exact
    knots = np.linspace(0.0, 1.0, vals.size)
    pts = np.union1d(edges, knots[(knots > edges[0]) & (knots < edges[-1])])
    lo, hi = pts[:-1], pts[1:]
    mid = 0.5 * (lo + hi)
    f = lambda x: np.interp(x, knots, vals) ** 2  # noqa: E731
    pieces = (hi - lo) * (f(lo) + 4.0 * f(mid) + f(hi)) / 6.0
    starts = np.searchsorted(pts, edges[:-1])
    return np.add.reduceat(pieces, starts)


def cell_edges(n):
    return np.arange(n + 1) / n


def integrated_variances(sigma, n, method="auto"):
    """All ``I_k(sigma) = n * int_{cell k} sigma**2`` for ``k = 1..n``.

    ``method="quad"`` forces adaptive quadrature (absolute tolerance 1e-12).
    """
    edges = cell_edges(n)
    if method == "quad":
        raw = _quad_cell_integrals(sigma, edges)
    else:
        raw = sigma.cell_integrals(edges)
    return n * raw


def integrated_variance(sigma, n, k):
    """``I_k(sigma)`` for a single 1-based cell index."""
    if not 1 <= k <= n:
        raise IndexError(f"cell index {k} outside 1..{n}")
    return float(n * sigma.cell_integrals(np.array([(k - 1) / n, k / n]))[0])


def l2_norm_sq(sigma):
    return sigma.l2_norm_sq()


@dataclass(frozen=True)
class RngStream:
    """Independent random stream ``stream_index`` under ``master_seed``.

    Implemented with ``numpy.random.SeedSequence`` spawn keys, so the draws of a
    stream do not depend on which other streams exist or in which order they
    are consumed.
    """

    master_seed: int
    stream_index: int

    def generator(self):
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.PCG64(seq))


def standard_normals(n, master_seed, streams):
    """Matrix whose row ``i`` holds ``n`` standard normals from stream ``streams[i]``."""
    streams = np.asarray(streams, dtype=np.int64)
    out = np.empty((streams.size, n))
    for i, s in enumerate(streams):
        out[i] = RngStream(master_seed, int(s)).generator().standard_normal(n)
    return out


@dataclass(eq=False)
class ObservationIncrements:
    """Increments ``Z_{k/n} - Z_{(k-1)/n}``, ``k = 1..n``."""

    n: int
    increments: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.increments.shape != (self.n,):
            raise InvalidParameterError(
                f"expected {self.n} increments, got shape {self.increments.shape}"
            )
        if not np.all(np.isfinite(self.increments)):
            raise InvalidParameterError("increments must be finite")

    @classmethod
    def from_levels(cls, levels):
        """Build from observed levels ``Z_0, Z_{1/n}, ..., Z_1``."""
        z = np.asarray(levels, dtype=float)
        return cls(n=z.size - 1, increments=np.diff(z), provenance={"source": "levels"})


def simulate_increments(sigma, n, rng):
    """Draw one observation vector under ``sigma`` from the given stream."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    sd = np.sqrt(integrated_variances(sigma, n) / n)
    z = rng.generator().standard_normal(n)
    return ObservationIncrements(
        n=n,
        increments=sd * z,
        provenance={"master_seed": rng.master_seed, "stream_index": rng.stream_index},
    )


def simulate_batch(sigma, n, master_seed, replications, offset=0):
    """Increment matrix (``replications x n``); row ``r`` uses stream ``offset + r``."""
    sd = np.sqrt(integrated_variances(sigma, n) / n)
    return standard_normals(n, master_seed, np.arange(offset, offset + replications)) * sd
