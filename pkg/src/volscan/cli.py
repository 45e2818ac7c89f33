"""Command line interface: ``volscan <verb> --config cfg.json [--seed S]``.

Exit status is 0 on success, 2 when the input fails validation and 3 when a
runtime error occurs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .calibration import calibrate_kappa, load_table, store_table, test_decision
from .errors import ConfigurationError, InvalidParameterError
from .harness import ExperimentConfig, run_study
from .model import ObservationIncrements
from .statistic import detection_set, multiscale_stat

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

STUDY_VERBS = {
    "level": "level",
    "power": "power",
    "adapt": "adaptivity",
    "oracle": "oracle",
    "refine": "refine",
    "detect": "detection",
}
VERBS = ("calibrate", "test", *STUDY_VERBS)


def build_parser():
    p = argparse.ArgumentParser(prog="volscan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override master_seed")
        s.add_argument("--output", help="override the output directory")
        if verb == "test":
            s.add_argument("--data", help="increments file (one value per line or JSON list)")
            s.add_argument("--table", help="quantile table JSON")
    return p


def _load_config(args, study):
    with open(args.config) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a JSON object")
    d = dict(d)
    if study is not None:
        d["study"] = study
    elif d.get("study") not in (None, *STUDY_VERBS.values()):
        raise InvalidParameterError(f"unknown study {d['study']!r}")
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.output:
        d["output"] = args.output
    return ExperimentConfig.from_dict(d)


def read_increments(path):
    with open(path) as fh:
        text = fh.read().strip()
    if text.startswith("["):
        vals = json.loads(text)
    else:
        vals = [float(tok) for tok in text.replace(",", " ").split()]
    return ObservationIncrements(n=len(vals), increments=np.asarray(vals, dtype=float),
                                 provenance={"source": path})


def _calibrate(cfg):
    kernel = cfg.kernel_obj()
    n = cfg.n[0]
    table = calibrate_kappa(n, cfg.alpha, cfg.calibration_replications, cfg.master_seed,
                            kernel, cfg.grid_for(n, kernel))
    path = cfg.table or os.path.join(cfg.output, f"kappa_n{n}.json")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    store_table(table, path)
    return {"table": path, "kappa": table.kappa, "n": n, "alpha": cfg.alpha}


def _test(cfg, args):
    data = args.data or cfg.data
    table_path = args.table or cfg.table
    if not data or not table_path:
        raise ConfigurationError("test needs a data file and a quantile table")
    obs = read_increments(data)
    table = load_table(table_path)
    kernel = cfg.kernel_obj()
    result = multiscale_stat(obs, kernel, cfg.grid_for(obs.n, kernel))
    decision = test_decision(result, table)
    dset = detection_set(result, table.kappa, table.alpha)
    os.makedirs(cfg.output, exist_ok=True)
    result.to_csv(os.path.join(cfg.output, "per_scale.csv"))
    with open(os.path.join(cfg.output, "detections.json"), "w") as fh:
        fh.write(dset.to_json())
    return {"decision": decision, "sup": result.sup_value, "kappa": table.kappa,
            "argmax": [result.argmax.t, result.argmax.h], "detections": len(dset)}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = _load_config(args, STUDY_VERBS.get(args.verb))
        if args.verb == "calibrate":
            summary = _calibrate(cfg)
        elif args.verb == "test":
            summary = _test(cfg, args)
        else:
            res = run_study(cfg)
            csv_path, man_path = res.write(cfg.output)
            summary = {"csv": csv_path, "manifest": man_path, "rows": len(res.records)}
    except (InvalidParameterError, ConfigurationError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001  -- any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
