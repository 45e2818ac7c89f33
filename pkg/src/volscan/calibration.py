"""Monte-Carlo critical values, quantile tables and the test decision.

The penalized supremum is distribution free under constant volatility, so its
``(1 - alpha)`` quantile is estimated once by simulating ``sigma = 1`` and
reused for every data set with the same sample size, kernel and grid.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidParameterError, SchemaError
from .model import VolatilityFunction, simulate_batch
from .statistic import ScaleGrid, scan_plan

SCHEMA_VERSION = 1
TABLE_KEYS = (
    "schema_version", "n", "alpha", "kappa", "replications",
    "master_seed", "kernel", "grid", "sample_summary",
)


@dataclass
class QuantileTable:
    """Calibrated critical value and the provenance needed to reuse it."""

    n: int
    alpha: float
    kappa: float
    replications: int
    master_seed: int
    kernel: dict
    grid: dict
    sample_summary: dict
    schema_version: int = SCHEMA_VERSION
    sample: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def key(self):
        """Content hash of (n, kernel, grid) that decisions check against."""
        return config_key(self.n, self.kernel, self.grid)

    def to_json(self):
        d = asdict(self)
        d.pop("sample")
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in TABLE_KEYS if k not in d]
        if missing:
            raise SchemaError(f"quantile table lacks {missing}")
        if d["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(
                f"quantile table schema {d['schema_version']} is not {SCHEMA_VERSION}"
            )
        try:
            return cls(
                n=int(d["n"]),
                alpha=float(d["alpha"]),
                kappa=float(d["kappa"]),
                replications=int(d["replications"]),
                master_seed=int(d["master_seed"]),
                kernel=dict(d["kernel"]),
                grid=dict(d["grid"]),
                sample_summary=dict(d["sample_summary"]),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed quantile table: {exc}") from exc


def grid_descriptor(grid):
    return dict(grid.descriptor(), hash=grid.content_hash)


def config_key(n, kernel_cfg, grid_desc):
    blob = json.dumps({"n": n, "kernel": kernel_cfg, "grid": grid_desc}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def quantile_index(alpha, replications):
    """1-based order statistic ``ceil((1 - alpha) R)``, robust to rounding."""
    k = (1.0 - alpha) * replications
    if abs(k - round(k)) <= 1e-9 * max(replications, 1):
        k = round(k)
    return min(max(math.ceil(k), 1), replications)


def empirical_quantile(sample, alpha):
    """Smallest sample value ``r`` with empirical ``P(X <= r) >= 1 - alpha``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.sort(np.asarray(sample, dtype=float))
    if s.size == 0:
        raise InvalidParameterError("empty sample")
    return float(s[quantile_index(alpha, s.size) - 1])


def simulate_sups(n, kernel, grid, replications, master_seed, sigma=None, offset=0, workers=1):
    """Penalized suprema of ``replications`` samples; row ``r`` uses stream ``offset + r``."""
    sigma = sigma or VolatilityFunction.constant(1.0)
    plan = scan_plan(kernel, grid)
    out = []
    chunk = 1000
    for start in range(0, replications, chunk):
        m = min(chunk, replications - start)
        x = simulate_batch(sigma, n, master_seed, m, offset=offset + start)
        out.append(plan.sups(x, workers=workers)[0])
    return np.concatenate(out) if out else np.empty(0)


def calibrate_kappa(n, alpha, replications, master_seed, kernel, grid=None, sigma=None, workers=1):
    """Estimate the critical value ``kappa_n^alpha`` by simulation.

    Parameters
    ----------
    n : int
        Sample size.
    alpha : float
        Level in (0, 1).
    replications : int
        Monte-Carlo sample size (at least 1; 2000 is the recommended default).
    master_seed : int
        Replication ``r`` uses stream ``r`` under this seed.
    kernel : Kernel
    grid : ScaleGrid, optional
        Defaults to ``ScaleGrid.build(n, kernel)``.
    sigma : VolatilityFunction, optional
        Constant volatility to simulate; any constant gives the same result.
    workers : int
        Threads used for the scan; the result does not depend on it.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if replications < 1:
        raise InvalidParameterError("replications must be at least 1")
    if sigma is not None and not sigma.is_constant:
        raise InvalidParameterError("calibration requires a constant volatility")
    grid = grid if grid is not None else ScaleGrid.build(n, kernel)
    if grid.n != n:
        raise InvalidParameterError(f"grid built for n={grid.n}, not {n}")
    sample = simulate_sups(n, kernel, grid, replications, master_seed, sigma, workers=workers)
    return QuantileTable(
        n=n,
        alpha=float(alpha),
        kappa=empirical_quantile(sample, alpha),
        replications=int(replications),
        master_seed=int(master_seed),
        kernel=kernel.to_config(),
        grid=grid_descriptor(grid),
        sample_summary={
            "min": float(sample.min()),
            "median": float(np.median(sample)),
            "max": float(sample.max()),
        },
        sample=sample,
    )


def check_compatible(table, n, kernel, grid_hash):
    if table.n != n:
        raise ConfigurationError(f"table calibrated for n={table.n}, data has n={n}")
    if table.kernel != kernel.to_config():
        raise ConfigurationError("table calibrated for a different kernel")
    if table.grid.get("hash") != grid_hash:
        raise ConfigurationError("table calibrated for a different scale grid")


def test_decision(result, table):
    """``1`` iff the penalized supremum strictly exceeds ``kappa``."""
    check_compatible(table, result.n, result.kernel, result.grid_hash)
    return int(result.sup_value > table.kappa)


test_decision.__test__ = False  # keep pytest from collecting it


def store_table(table, path):
    with open(path, "w") as fh:
        fh.write(table.to_json())


def load_table(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"corrupt quantile table {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise SchemaError("quantile table must be a JSON object")
    return QuantileTable.from_dict(d)


def cached_calibration(cache_dir, n, alpha, replications, master_seed, kernel, grid=None):
    """Load the matching table from ``cache_dir`` or calibrate and store it."""
    grid = grid if grid is not None else ScaleGrid.build(n, kernel)
    key = config_key(n, kernel.to_config(), grid_descriptor(grid))
    name = f"kappa_{key}_a{alpha}_r{replications}_s{master_seed}.json"
    path = os.path.join(cache_dir, name)
    if os.path.exists(path):
        return load_table(path)
    table = calibrate_kappa(n, alpha, replications, master_seed, kernel, grid)
    os.makedirs(cache_dir, exist_ok=True)
    store_table(table, path)
    return table

