"""Experiment configuration and the Monte-Carlo studies.

Every study is a pure function of its :class:`ExperimentConfig`.  Calibration
replications use streams ``0 .. R-1`` of the master seed and evaluation
replications use streams from ``EVAL_OFFSET`` on, so the two never overlap.
All cells of a study share the same evaluation streams, which makes rejection
frequencies across cells directly comparable replication by replication.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .alternatives import (
    DEFAULT_J,
    constant_c_star,
    distance_dJ,
    eval_F,
    holder_membership,
    multiplier_alternative,
    rate_rho,
)
from .calibration import calibrate_kappa, check_compatible
from .errors import InvalidParameterError, SchemaError
from .kernel import Kernel, half_level_radius
from .model import VolatilityFunction, simulate_batch, standard_normals
from .statistic import ScaleGrid, canonical_ratios, scan_plan

EVAL_OFFSET = 1 << 32
ORACLE_OFFSET = 1 << 40
STUDIES = ("level", "power", "adaptivity", "oracle", "refine", "detection")
ADAPTIVE_KERNEL = {"form": "optimal_recovery", "beta": 0.75}


@dataclass
class ExperimentConfig:
    """One study, loaded from the JSON config schema.

    Keys not listed here are rejected so that typos fail validation.
    """

    study: str = "level"
    n: list = field(default_factory=lambda: [512])
    alpha: float = 0.05
    replications: int = 2000
    calibration_replications: int = 2000
    master_seed: int = 20240601
    kernel: dict | None = None
    grid: dict = field(default_factory=dict)
    levels: list = field(default_factory=lambda: [1.0, 3.0, 10.0])
    alternative: dict = field(default_factory=dict)
    output: str = "results"
    table: str | None = None
    data: str | None = None

    def __post_init__(self):
        if self.study not in STUDIES:
            raise InvalidParameterError(f"study must be one of {STUDIES}, got {self.study!r}")
        if self.kernel is None:
            if self.study == "adaptivity":
                self.kernel = dict(ADAPTIVE_KERNEL)
            else:
                beta = float(self.alternative.get("beta", 1.0))
                self.kernel = {"form": "optimal_recovery", "beta": min(beta, 1.0)}
        if isinstance(self.n, int):
            self.n = [self.n]
        self.n = [int(v) for v in self.n]
        if not self.n or min(self.n) < 2:
            raise InvalidParameterError("n must list sample sizes >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError("alpha must lie in (0, 1)")
        if self.study in ("level", "power") and self.replications < 100:
            raise InvalidParameterError("level and power studies need >= 100 replications")
        if self.replications < 1 or self.calibration_replications < 1:
            raise InvalidParameterError("replications must be positive")
        unknown = set(self.grid) - {"ratio", "step_fraction", "min_step"}
        if unknown:
            raise SchemaError(f"unknown grid keys {sorted(unknown)}")
        if any(c <= 0 for c in self.levels):
            raise InvalidParameterError("volatility levels must be positive")
        self.kernel_obj()

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise SchemaError("config must be a JSON object")
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def kernel_obj(self, cfg=None):
        return Kernel.from_config(cfg or self.kernel)

    def grid_for(self, n, kernel):
        return ScaleGrid.build(n, kernel, **self.grid)


@dataclass
class StudyResult:
    """Per-cell records plus the manifest data of one study run."""

    study: str
    columns: list
    records: list
    config: dict
    wall_time: float = 0.0
    details: dict = field(default_factory=dict, repr=False)

    def csv_text(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        w.writeheader()
        for rec in self.records:
            w.writerow({k: _fmt(rec.get(k)) for k in self.columns})
        return buf.getvalue()

    def manifest(self):
        return {
            "study": self.study,
            "config": self.config,
            "version": version_string(),
            "wall_time": self.wall_time,
            "rows": len(self.records),
            "columns": self.columns,
        }

    def write(self, directory):
        """Write ``<study>.csv`` and ``<study>_manifest.json``; returns both paths."""
        os.makedirs(directory, exist_ok=True)
        csv_path = os.path.join(directory, f"{self.study}.csv")
        man_path = os.path.join(directory, f"{self.study}_manifest.json")
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.csv_text())
        with open(man_path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
        return csv_path, man_path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def version_string():
    """``git describe`` of the source tree, else the installed package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        from importlib.metadata import PackageNotFoundError, version

        try:
            return version("artifact")
        except PackageNotFoundError:
            return "unknown"


def binomial_se(p, reps):
    return math.sqrt(p * (1.0 - p) / reps)


def _calibrate(config, n, kernel, grid, table=None):
    if table is not None:
        check_compatible(table, n, kernel, grid.content_hash)
        return table
    return calibrate_kappa(n, config.alpha, config.calibration_replications,
                           config.master_seed, kernel, grid)


def _sups(sigma, n, kernel, grid, config, offset=EVAL_OFFSET):
    plan = scan_plan(kernel, grid)
    out = []
    for start in range(0, config.replications, 1000):
        m = min(1000, config.replications - start)
        x = simulate_batch(sigma, n, config.master_seed, m, offset=offset + start)
        out.append(plan.sups(x)[0])
    return np.concatenate(out)


def _rejection_record(rejections, sups, reps, kappa):
    p = float(np.mean(rejections))
    return {"rejection": p, "se": binomial_se(p, reps), "mean_sup": float(np.mean(sups)),
            "kappa": float(kappa), "replications": reps}


def _timed(fn):
    def wrapper(config, *args, **kwargs):
        t0 = time.perf_counter()
        res = fn(config, *args, **kwargs)
        res.wall_time = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def run_level_study(config, table=None):
    """Rejection frequency under ``sigma = c`` for every ``c`` in ``config.levels``."""
    kernel = config.kernel_obj()
    n = config.n[0]
    grid = config.grid_for(n, kernel)
    table = _calibrate(config, n, kernel, grid, table)
    records, decisions = [], {}
    for c in config.levels:
        sups = _sups(VolatilityFunction.constant(c), n, kernel, grid, config)
        rej = sups > table.kappa
        decisions[c] = rej
        records.append(dict(n=n, c=float(c), alpha=config.alpha,
                            **_rejection_record(rej, sups, config.replications, table.kappa)))
    cols = ["n", "c", "alpha", "rejection", "se", "mean_sup", "kappa", "replications"]
    return StudyResult("level", cols, records, config.to_dict(),
                       details={"decisions": decisions, "table": table})


def _alt_params(config):
    alt = dict(config.alternative)
    return (
        float(alt.get("beta", 1.0)),
        float(alt.get("L", 1.0)),
        tuple(alt.get("J", DEFAULT_J)),
        alt,
    )


@_timed
def run_power_study(config, table=None):
    """Rejection frequency per ``(n, m)`` cell for alternatives at ``d_J = m c_* rho_n``."""
    beta, L, J, alt = _alt_params(config)
    multipliers = [float(m) for m in alt.get("multipliers", [0.5, 1.0, 1.5, 2.0])]
    kernel = config.kernel_obj()
    records, decisions = [], {}
    for n in config.n:
        grid = config.grid_for(n, kernel)
        tab = _calibrate(config, n, kernel, grid, table if len(config.n) == 1 else None)
        target = constant_c_star(beta, L) * rate_rho(n, beta)
        for m in multipliers:
            sigma = multiplier_alternative(beta, L, n, m, J)
            sups = _sups(sigma, n, kernel, grid, config)
            rej = sups > tab.kappa
            decisions[(n, m)] = rej
            records.append(dict(
                n=n, beta=beta, L=L, m=m,
                d_J=distance_dJ(sigma, J), target=m * target,
                holder_quotient=holder_membership(sigma, beta, L).quotient,
                **_rejection_record(rej, sups, config.replications, tab.kappa),
            ))
    cols = ["n", "beta", "L", "m", "d_J", "target", "holder_quotient",
            "rejection", "se", "mean_sup", "kappa", "replications"]
    return StudyResult("power", cols, records, config.to_dict(), details={"decisions": decisions})


@_timed
def run_adaptivity_study(config, table=None):
    """Power over a ``(beta, L)`` sweep with one kernel and one calibration."""
    alt = dict(config.alternative)
    cells = [tuple(map(float, c)) for c in alt.get("cells", [[1, 0.5], [1, 1], [1, 2], [0.5, 1]])]
    m = float(alt.get("multiplier", 1.5))
    J = tuple(alt.get("J", DEFAULT_J))
    kernel = config.kernel_obj()
    if kernel.form == "optimal_recovery" and any(kernel.beta == b for b, _ in cells):
        raise InvalidParameterError("adaptivity needs a kernel not matched to any swept beta")
    n = config.n[0]
    grid = config.grid_for(n, kernel)
    tab = _calibrate(config, n, kernel, grid, table)
    records = []
    for beta, L in cells:
        sigma = multiplier_alternative(beta, L, n, m, J)
        sups = _sups(sigma, n, kernel, grid, config)
        records.append(dict(
            n=n, beta=beta, L=L, m=m, d_J=distance_dJ(sigma, J),
            target=m * constant_c_star(beta, L) * rate_rho(n, beta),
            holder_quotient=holder_membership(sigma, beta, L).quotient,
            **_rejection_record(sups > tab.kappa, sups, config.replications, tab.kappa),
        ))
    cols = ["n", "beta", "L", "m", "d_J", "target", "holder_quotient",
            "rejection", "se", "mean_sup", "kappa", "replications"]
    return StudyResult("adaptivity", cols, records, config.to_dict())


# ---------------------------------------------------------------------------
# oracle checks


def bernstein_check(weights, x_values, reps, master_seed, offset=ORACLE_OFFSET):
    """Empirical frequency of the weighted chi-square tail event for each ``x``."""
    a = np.asarray(weights, dtype=float)
    a = a[a != 0]
    V = float(np.sum(a * a))
    M = float(np.max(np.abs(a)))
    counts = np.zeros(len(x_values))
    for start in range(0, reps, 20000):
        m = min(20000, reps - start)
        z = standard_normals(a.size, master_seed, np.arange(offset + start, offset + start + m))
        s = np.abs((z * z - 1.0) @ a)
        for i, x in enumerate(x_values):
            counts[i] += np.count_nonzero(s >= 2.0 * math.sqrt(V * x) + 2.0 * M * x)
    return counts / reps, V, M


def lambda_bound_violations(kernel, n, grid=None):
    """Grid scales where ``Lambda_n**2 < (c_beta / 3) h``."""
    grid = grid or ScaleGrid.build(n, kernel)
    plan = scan_plan(kernel, grid)
    c = half_level_radius(kernel)
    bad = plan.lambda_n**2 < (c / 3.0) * plan.h
    return int(np.count_nonzero(bad)), len(grid)


def c_hat_moment(n, c, reps, master_seed, offset=ORACLE_OFFSET):
    """Monte-Carlo ``n E[(c_hat**2 - c**2)**2] / c**4`` and its standard error."""
    vals = []
    sigma = VolatilityFunction.constant(c)
    for start in range(0, reps, 20000):
        m = min(20000, reps - start)
        x = simulate_batch(sigma, n, master_seed, m, offset=offset + start)
        vals.append(n * (np.sum(x * x, axis=1) - c * c) ** 2 / c**4)
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def f_derivative(beta, L=1.0, step=1e-6):
    """Central difference of ``F(0, 0, z)`` at ``z = 1``."""
    return (eval_F(0.0, 0.0, 1.0 + step, beta, L) - eval_F(0.0, 0.0, 1.0 - step, beta, L)) / (2 * step)


def oracle_scales(grid):
    """Smallest, a middle and the largest bandwidth of a grid, at central locations."""
    hs = sorted({s.h for s in grid.scales})
    picks = [hs[0], hs[len(hs) // 2], hs[-1]]
    out = []
    for h in picks:
        ts = [s.t for s in grid.scales if s.h == h]
        out.append(min(ts, key=lambda t: abs(t - 0.5)))
    return list(zip(out, picks))


@_timed
def run_oracle_checks(config):
    """Bernstein tail, Lambda lower bound, realised-variance moment and F derivative."""
    kernel = config.kernel_obj()
    reps = config.replications
    seed = config.master_seed
    records = []
    xs = [1.0, 2.0, 4.0]
    for n in config.n:
        grid = config.grid_for(n, kernel)
        plan = scan_plan(kernel, grid)
        profiles = [("uniform", np.full(n, 1.0 / math.sqrt(2.0 * n)))]
        for t, h in oracle_scales(grid):
            i = next(i for i, s in enumerate(grid.scales) if s.t == t and s.h == h)
            profiles.append((f"scale t={t:.4g} h={h:.4g}", plan.weights.getrow(i).toarray().ravel()))
        for name, a in profiles:
            freqs, V, M = bernstein_check(a, xs, reps, seed)
            for x, f in zip(xs, freqs):
                bound = 2.0 * math.exp(-x)
                se = math.sqrt(bound * (1.0 - bound) / reps)
                records.append(dict(check="bernstein", n=n, parameter=f"{name} x={x:g}",
                                    value=float(f), bound=bound + 3 * se, passed=bool(f <= bound + 3 * se)))
        bad, size = lambda_bound_violations(kernel, n, grid)
        records.append(dict(check="lambda_lower_bound", n=n, parameter=f"{size} scales",
                            value=float(bad), bound=0.0, passed=bad == 0))
        for c in config.levels[:2]:
            mean, se = c_hat_moment(n, c, reps, seed)
            records.append(dict(check="c_hat_moment", n=n, parameter=f"c={c:g}",
                                value=mean, bound=0.1, passed=abs(mean - 2.0) <= 0.1))
    for beta in (0.25, 0.5, 1.0):
        d = f_derivative(beta)
        target = -beta / (2 * beta + 1)
        records.append(dict(check="F_derivative", n="", parameter=f"beta={beta:g}",
                            value=d, bound=1e-6, passed=abs(d - target) <= 1e-6))
        f0 = eval_F(0.0, 0.0, 1.0, beta, 1.0)
        records.append(dict(check="F_origin", n="", parameter=f"beta={beta:g}",
                            value=f0, bound=1e-15, passed=abs(f0) <= 1e-15))
    cols = ["check", "n", "parameter", "value", "bound", "passed"]
    return StudyResult("oracle", cols, records, config.to_dict())


# ---------------------------------------------------------------------------
# grid refinement and detection regions


@_timed
def run_refinement_check(config):
    """Compare the default grid with its refinement under the null.

    Reports per-replication sup changes on ``replications`` null samples and
    the fraction of fresh null samples whose decision flips when each grid
    uses its own calibrated ``kappa``.
    """
    kernel = config.kernel_obj()
    n = config.n[0]
    coarse = config.grid_for(n, kernel)
    fine = coarse.refine() if not config.alternative.get("identical") else coarse
    one = VolatilityFunction.constant(1.0)
    reps = config.replications
    x = simulate_batch(one, n, config.master_seed, reps, offset=EVAL_OFFSET)
    s0 = scan_plan(kernel, coarse).sups(x)[0]
    s1 = scan_plan(kernel, fine).sups(x)[0]
    rel = np.abs(s1 - s0) / np.maximum(np.abs(s0), 1e-12)
    t0 = calibrate_kappa(n, config.alpha, config.calibration_replications,
                         config.master_seed, kernel, coarse)
    t1 = calibrate_kappa(n, config.alpha, config.calibration_replications,
                         config.master_seed, kernel, fine)
    eval_reps = int(config.alternative.get("decision_replications", config.calibration_replications))
    y = simulate_batch(one, n, config.master_seed, eval_reps, offset=EVAL_OFFSET + reps)
    d0 = scan_plan(kernel, coarse).sups(y)[0] > t0.kappa
    d1 = scan_plan(kernel, fine).sups(y)[0] > t1.kappa
    flips = float(np.mean(d0 != d1))
    records = [dict(
        n=n, coarse_scales=len(coarse), fine_scales=len(fine),
        median_rel_change=float(np.median(rel)), max_rel_change=float(rel.max()),
        max_abs_change=float(np.max(np.abs(s1 - s0))),
        kappa_coarse=t0.kappa, kappa_fine=t1.kappa, decision_flips=flips,
        flip_replications=eval_reps, replications=reps,
    )]
    cols = list(records[0])
    return StudyResult("refine", cols, records, config.to_dict(),
                       details={"sup_coarse": s0, "sup_fine": s1})


@_timed
def run_detection_study(config, table=None):
    """Null non-empty frequency of detection sets and localisation under one bump."""
    beta, L, J, alt = _alt_params(config)
    m = float(alt.get("multiplier", 2.0))
    kernel = config.kernel_obj()
    n = config.n[0]
    grid = config.grid_for(n, kernel)
    tab = _calibrate(config, n, kernel, grid, table)
    plan = scan_plan(kernel, grid)
    lo_s, hi_s = plan.t - plan.h, plan.t + plan.h
    records = []
    for label, sigma in (("null", VolatilityFunction.constant(1.0)),
                         ("bump", multiplier_alternative(beta, L, n, m, J))):
        if sigma.bumps:
            blo, bhi = sigma.bumps[0].support
            hits = (hi_s > blo) & (lo_s < bhi)
        else:
            blo = bhi = float("nan")
            hits = np.zeros(len(grid), dtype=bool)
        nonempty = localised = 0
        for start in range(0, config.replications, 250):
            k = min(250, config.replications - start)
            x = simulate_batch(sigma, n, config.master_seed, k, offset=EVAL_OFFSET + start)
            pen = np.abs(plan.raw(canonical_ratios(x))) - plan.penalty[:, None]
            exceed = pen > tab.kappa
            any_ = exceed.any(axis=0)
            nonempty += int(np.count_nonzero(any_))
            localised += int(np.count_nonzero((exceed & hits[:, None]).any(axis=0)))
        p = nonempty / config.replications
        records.append(dict(
            case=label, n=n, m=m if sigma.bumps else 0.0, support_lo=blo, support_hi=bhi,
            nonempty=p, se=binomial_se(p, config.replications),
            localised_given_rejection=(localised / nonempty) if nonempty else float("nan"),
            kappa=tab.kappa, replications=config.replications,
        ))
    cols = list(records[0])
    return StudyResult("detection", cols, records, config.to_dict())


RUNNERS = {
    "level": run_level_study,
    "power": run_power_study,
    "adaptivity": run_adaptivity_study,
    "oracle": run_oracle_checks,
    "refine": run_refinement_check,
    "detection": run_detection_study,
}


def run_study(config, table=None):
    runner = RUNNERS[config.study]
    if config.study in ("oracle", "refine"):
        return runner(config)
    return runner(config, table=table)

