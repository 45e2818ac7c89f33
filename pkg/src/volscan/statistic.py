"""Local statistics, penalty and the penalized multiscale supremum.

The scan over a :class:`ScaleGrid` is precomputed once per (kernel, grid) as
a sparse matrix whose row for scale ``(t, h)`` holds ``lambda_k / (sqrt(2)
Lambda_n)``.  The statistic of a sample is then one sparse product with the
centred ratios ``n d_k**2 / c_hat**2 - 1``.

Exact scale invariance
----------------------
Mathematically the statistic is unchanged when all increments are multiplied
by ``c > 0``, but floating point rounding of ``(c d_k)**2`` breaks this in the
last bits.  The ratios ``n d_k**2 / c_hat**2`` are therefore rounded to
``RATIO_BITS`` significant bits before the scan.  Rounding errors of a few
ulps then almost never cross a quantisation boundary, so the scan returns
bit-identical values for rescaled data.  The induced change of the statistic
is of relative order ``2**-RATIO_BITS``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DegenerateObservationError, InvalidParameterError
from .kernel import grid_constant

RATIO_BITS = 20
DEFAULT_RATIO = math.sqrt(2.0)
DEFAULT_STEP_FRACTION = 0.25
BATCH_SIZE = 256


@dataclass(frozen=True)
class Scale:
    """Location ``t`` and bandwidth ``h`` of one local test."""

    t: float
    h: float

    def sort_key(self):
        return (self.h, self.t)

    def interval(self):
        return (self.t - self.h, self.t + self.h)


@dataclass(frozen=True)
class ScaleGrid:
    """Finite subset of ``{h in [K/n, 1/2), t in [h, 1 - h]}``.

    Bandwidths are ``(K/n) ratio**j`` below 1/2; for each bandwidth the
    locations run from ``h`` to ``1 - h`` in steps of
    ``max(min_step / n, step_fraction * h)``, with ``1 - h`` always included.
    Scales are stored in (h ascending, t ascending) order.
    """

    n: int
    k_psi: float
    ratio: float = DEFAULT_RATIO
    step_fraction: float = DEFAULT_STEP_FRACTION
    min_step: float = 1.0
    scales: tuple[Scale, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.k_psi <= 0 or self.ratio <= 1 or self.step_fraction <= 0:
            raise InvalidParameterError("invalid grid parameters")
        if not self.scales:
            object.__setattr__(self, "scales", tuple(self._generate()))

    @classmethod
    def build(cls, n, kernel, ratio=DEFAULT_RATIO, step_fraction=DEFAULT_STEP_FRACTION, min_step=1.0):
        return cls(n=int(n), k_psi=grid_constant(kernel), ratio=ratio,
                   step_fraction=step_fraction, min_step=min_step)

    def refine(self):
        """Grid with ratio ``sqrt(ratio)`` and both location-step rules halved."""
        return ScaleGrid(
            n=self.n,
            k_psi=self.k_psi,
            ratio=math.sqrt(self.ratio),
            step_fraction=self.step_fraction / 2.0,
            min_step=self.min_step / 2.0,
        )

    def bandwidths(self):
        out = []
        j = 0
        while True:
            h = (self.k_psi / self.n) * self.ratio**j
            if h >= 0.5:
                return out
            out.append(h)
            j += 1

    def locations(self, h):
        step = max(self.min_step / self.n, self.step_fraction * h)
        count = int(math.floor((1.0 - 2.0 * h) / step + 1e-9))
        t = h + step * np.arange(count + 1)
        t = t[t < 1.0 - h - 1e-12 * step]
        return np.append(t, 1.0 - h)

    def _generate(self):
        for h in self.bandwidths():
            for t in self.locations(h):
                yield Scale(float(t), float(h))

    def __len__(self):
        return len(self.scales)

    def descriptor(self):
        return {
            "n": self.n,
            "k_psi": self.k_psi,
            "ratio": self.ratio,
            "step_fraction": self.step_fraction,
            "min_step": self.min_step,
            "size": len(self.scales),
        }

    @property
    def content_hash(self):
        h = hashlib.sha256(json.dumps(self.descriptor(), sort_keys=True).encode())
        h.update(np.array([[s.t, s.h] for s in self.scales]).tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def single(cls, n, k_psi, scale):
        """Grid holding one scale (for diagnostics)."""
        return cls(n=n, k_psi=k_psi, scales=(scale,))


def _check_cell(n, k):
    if not 1 <= k <= n:
        raise IndexError(f"cell index {k} outside 1..{n}")


def _cell_weights(kernel, n, t, h, first, last):
    """``lambda_k`` for 1-based cells ``first..last`` (arrays broadcast)."""
    k = np.asarray(first)[..., None] + np.arange(int(np.max(np.asarray(last) - np.asarray(first))) + 1)
    a = ((k - 1) / n - np.asarray(t)[..., None]) / h
    b = (k / n - np.asarray(t)[..., None]) / h
    return k, math.sqrt(n) * h * kernel.integral(a, b)


def _support_cells(kernel, n, t, h):
    w = h * max(1.0, kernel.half_width)
    first = np.maximum(np.floor((np.asarray(t) - w) * n).astype(np.int64) + 1, 1)
    last = np.minimum(np.ceil((np.asarray(t) + w) * n).astype(np.int64), n)
    return first, last


def lambda_k(kernel, n, scale, k):
    """``sqrt(n) * int_{(k-1)/n}^{k/n} psi((s - t) / h) ds``."""
    _check_cell(n, k)
    a = ((k - 1) / n - scale.t) / scale.h
    b = (k / n - scale.t) / scale.h
    return float(math.sqrt(n) * scale.h * kernel.integral(a, b))


def lambda_vector(kernel, n, scale):
    """All ``lambda_k``, ``k = 1..n``."""
    k = np.arange(1, n + 1)
    return math.sqrt(n) * scale.h * kernel.integral(
        ((k - 1) / n - scale.t) / scale.h, (k / n - scale.t) / scale.h
    )


def capital_lambda(kernel, n, scale):
    """``Lambda_n(t, h) = sqrt(sum_k lambda_k**2)``."""
    return float(np.sqrt(np.sum(lambda_vector(kernel, n, scale) ** 2)))


def c_hat_sq(obs):
    """Realised variance ``sum_k d_k**2`` (exactly rounded sum)."""
    d = np.asarray(getattr(obs, "increments", obs), dtype=float)
    return math.fsum(d * d)


def local_stat(obs, kernel, scale, c_sq):
    """``(1/sqrt 2) sum_k lambda_k (n d_k**2 - c) / (c Lambda_n)``."""
    if not c_sq > 0:
        raise InvalidParameterError(f"c_sq must be positive, got {c_sq}")
    d = np.asarray(obs.increments, dtype=float)
    n = d.size
    lam = lambda_vector(kernel, n, scale)
    big = math.sqrt(math.fsum(lam * lam))
    return math.fsum(lam * (n * d * d - c_sq)) / (math.sqrt(2.0) * c_sq * big)


def _penalty_array(n, lam):
    eta = 2.0 * np.log(1.0 / lam)
    return np.sqrt(2.0 * eta) + 2.0 * eta / np.maximum(1.0, math.sqrt(n) * lam)


def penalty(n, lambda_val):
    """``G_n(2 log(1/Lambda), Lambda)``."""
    if not 0.0 < lambda_val <= 1.0:
        raise InvalidParameterError(f"Lambda must lie in (0, 1], got {lambda_val}")
    return float(_penalty_array(n, np.asarray(lambda_val, dtype=float)))


def canonical_ratios(increments):
    """``n d_k**2 / c_hat**2`` rounded to ``RATIO_BITS`` significant bits.

    Accepts one increment vector or a matrix with one sample per row.
    """
    d = np.atleast_2d(np.asarray(increments, dtype=float))
    n = d.shape[1]
    sq = d * d
    c = np.array([math.fsum(row) for row in sq])
    if np.any(c <= 0) or not np.all(np.isfinite(c)):
        raise DegenerateObservationError("realised variance is zero; the statistic is undefined")
    r = sq * (n / c)[:, None]
    m, e = np.frexp(r)
    return np.ldexp(np.round(m * 2.0**RATIO_BITS), e - RATIO_BITS)


class ScanPlan:
    """Sparse weights, norming and penalties for one (kernel, grid) pair."""

    def __init__(self, kernel, grid):
        self.kernel = kernel
        self.grid = grid
        n = grid.n
        rows, cols, vals = [], [], []
        lam_all = []
        offset = 0
        by_h = {}
        for s in grid.scales:
            by_h.setdefault(s.h, []).append(s.t)
        for h, ts in by_h.items():
            t = np.asarray(ts)
            first, last = _support_cells(kernel, n, t, h)
            k, lam = _cell_weights(kernel, n, t, h, first, last)
            valid = k <= last[:, None]
            lam = np.where(valid, lam, 0.0)
            big = np.sqrt(np.sum(lam * lam, axis=1))
            if np.any(big <= 0):
                raise InvalidParameterError("grid contains a scale with all weights zero")
            lam_all.append(big)
            w = lam / (math.sqrt(2.0) * big[:, None])
            r = np.broadcast_to(offset + np.arange(t.size)[:, None], k.shape)
            keep = valid & (w != 0.0)
            rows.append(r[keep])
            cols.append(k[keep] - 1)
            vals.append(w[keep])
            offset += t.size
        self.weights = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, n),
        )
        self.lambda_n = np.concatenate(lam_all)
        self.penalty = _penalty_array(n, np.minimum(self.lambda_n, 1.0))
        self.t = np.array([s.t for s in grid.scales])
        self.h = np.array([s.h for s in grid.scales])

    @property
    def n(self):
        return self.grid.n

    def raw(self, ratios):
        """Local statistics for canonical ratios; shape (scales, samples)."""
        return self.weights @ (np.atleast_2d(ratios) - 1.0).T

    def sups(self, increments, workers=1):
        """Penalized suprema and argmax indices for a matrix of samples."""
        x = np.atleast_2d(np.asarray(increments, dtype=float))
        if x.shape[1] != self.n:
            raise InvalidParameterError(f"expected {self.n} increments per sample")
        blocks = [slice(i, i + BATCH_SIZE) for i in range(0, x.shape[0], BATCH_SIZE)]

        def work(sl):
            pen = np.abs(self.raw(canonical_ratios(x[sl]))) - self.penalty[:, None]
            idx = np.argmax(pen, axis=0)
            return pen[idx, np.arange(idx.size)], idx

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(work, blocks))
        else:
            parts = [work(sl) for sl in blocks]
        if not parts:
            return np.empty(0), np.empty(0, dtype=np.int64)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


_PLANS = {}


def scan_plan(kernel, grid):
    """Cached :class:`ScanPlan` for ``(kernel, grid)``."""
    key = (kernel, grid.content_hash)
    plan = _PLANS.get(key)
    if plan is None:
        if len(_PLANS) > 16:
            _PLANS.clear()
        plan = _PLANS[key] = ScanPlan(kernel, grid)
    return plan


@dataclass(eq=False)
class MultiscaleResult:
    """Penalized supremum with its argmax and the full per-scale table."""

    sup_value: float
    argmax: Scale
    t: np.ndarray
    h: np.ndarray
    lambda_n: np.ndarray
    raw: np.ndarray
    penalty: np.ndarray
    n: int
    grid_hash: str
    kernel: object = None

    @property
    def penalized(self):
        return np.abs(self.raw) - self.penalty

    @property
    def per_scale(self):
        return {
            Scale(float(t), float(h)): (float(r), float(lam), float(p))
            for t, h, r, lam, p in zip(self.t, self.h, self.raw, self.lambda_n, self.penalty)
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h", "lambda_n", "raw", "penalty", "penalized"])
            for row in zip(self.t, self.h, self.lambda_n, self.raw, self.penalty, self.penalized):
                w.writerow([repr(float(v)) for v in row])


def multiscale_stat(obs, kernel, grid):
    """Penalized supremum of ``|Psi| - G_n`` over ``grid`` using ``c_hat**2``."""
    if not grid.scales:
        raise InvalidParameterError("scale grid is empty")
    d = np.asarray(obs.increments, dtype=float)
    if d.size != grid.n:
        raise InvalidParameterError(f"grid built for n={grid.n}, got {d.size} increments")
    plan = scan_plan(kernel, grid)
    raw = plan.raw(canonical_ratios(d))[:, 0]
    pen = np.abs(raw) - plan.penalty
    i = int(np.argmax(pen))
    return MultiscaleResult(
        sup_value=float(pen[i]),
        argmax=grid.scales[i],
        t=plan.t,
        h=plan.h,
        lambda_n=plan.lambda_n,
        raw=raw,
        penalty=plan.penalty,
        n=grid.n,
        grid_hash=grid.content_hash,
        kernel=kernel,
    )


@dataclass
class DetectionSet:
    """Scales whose local statistic exceeds ``kappa`` plus the penalty."""

    scales: list
    kappa: float
    alpha: float | None = None

    def __len__(self):
        return len(self.scales)

    def __bool__(self):
        return bool(self.scales)

    def intervals(self):
        return [s.interval() for s in self.scales]

    def to_json(self):
        return json.dumps(
            {"alpha": self.alpha, "kappa": self.kappa, "scales": [[s.t, s.h] for s in self.scales]}
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(scales=[Scale(float(t), float(h)) for t, h in obj["scales"]],
                   kappa=obj["kappa"], alpha=obj.get("alpha"))


def detection_set(result, kappa, alpha=None):
    """All scales with ``|raw| - penalty > kappa``."""
    if math.isnan(kappa):
        raise InvalidParameterError("kappa must not be NaN")
    idx = np.flatnonzero(result.penalized > kappa)
    return DetectionSet(
        scales=[Scale(float(result.t[i]), float(result.h[i])) for i in idx],
        kappa=float(kappa),
        alpha=alpha,
    )
