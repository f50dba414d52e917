"""Command-line entry point.

    jointsparse gen   --config c.json [--output DIR]
    jointsparse solve --config c.json --alg bcd
    jointsparse train --config c.json
    jointsparse eval  --config c.json
    jointsparse bench --config c.json --study {convergence,sweep,timing}

Exit status: 0 on success, 2 on a usage or configuration error, 3 when a
computation produces non-finite values.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .experiments import (
    ALGORITHMS,
    REPORT_FIELDS,
    ConfigError,
    ExperimentConfig,
    evaluate,
    load_network,
    run_convergence_study,
    run_mse_sweep,
    run_timing_bench,
    scenario_data,
    train_network,
    write_curves,
    write_report,
)
from .network import save_params
from .signal_model import ComplexMatrix, write_matrix
from .solvers import NumericError

log = logging.getLogger("jointsparse")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(path: str, output: str | None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"{path} is not valid JSON ({e})") from None
    cfg = ExperimentConfig.from_dict(doc)
    if output is not None:
        cfg = dataclasses.replace(cfg, output=output)
    return cfg


def _emit(cfg: ExperimentConfig, rows) -> None:
    if cfg.output:
        write_report(cfg.output, rows)
        log.info("wrote %d rows to %s", len(rows), cfg.output)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow(r.to_csv())


def _stacked(m: ComplexMatrix) -> ComplexMatrix:
    """``(T, R, C)`` stack as one ``(T * R, C)`` matrix."""
    t, r, c = m.shape
    return ComplexMatrix(m.re.reshape(t * r, c), m.im.reshape(t * r, c))


def cmd_gen(cfg: ExperimentConfig, args) -> None:
    out = Path(cfg.output or "data")
    out.mkdir(parents=True, exist_ok=True)
    data = scenario_data(cfg, cfg.scenario)
    write_matrix(out / "a.txt", data.a_iid)
    write_matrix(out / "x_test.txt", _stacked(data.x_test))
    write_matrix(out / "y_test.txt", _stacked(data.measure(data.a_iid)))
    write_matrix(out / "x_val.txt", _stacked(data.x_val))
    write_matrix(out / "y_val.txt", _stacked(data.measure(data.a_iid, "val")))
    s = cfg.scenario
    meta = {"scenario": dataclasses.asdict(s), "T": cfg.T, "validation": cfg.validation,
            "seeds": {"data": cfg.seed_data, "noise": cfg.seed_noise},
            "layout": "x files stack T blocks of N rows; y files stack T blocks of L rows"}
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    log.info("wrote scenario %s to %s", s.scenario_id, out)


def cmd_solve(cfg: ExperimentConfig, args) -> None:
    alg = args.alg.upper()
    if alg not in ALGORITHMS:
        raise ConfigError("--alg", f"unknown algorithm {args.alg!r}")
    params = load_network(dataclasses.replace(cfg, algorithms=(alg,)), cfg.scenario)
    row = evaluate(alg, scenario_data(cfg, cfg.scenario), cfg, params)
    _emit(cfg, [row])


def cmd_train(cfg: ExperimentConfig, args) -> None:
    if cfg.net.checkpoint is None:
        raise ConfigError("net.checkpoint", "train needs a path to write the parameters to")
    path = cfg.net.checkpoint_path(cfg.scenario)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_dir = path.parent if cfg.train.checkpoint_every else None
    res = train_network(cfg, checkpoint_dir=ckpt_dir)
    save_params(path, res.params)
    curve = Path(cfg.output) if cfg.output else path.with_name(path.stem + "_curve.csv")
    res.write_curve(curve)
    log.info("saved parameters to %s and loss curve to %s", path, curve)


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    _emit(cfg, run_mse_sweep(dataclasses.replace(cfg, output=None), sweep={}))


def cmd_bench(cfg: ExperimentConfig, args) -> None:
    quiet = dataclasses.replace(cfg, output=None)
    if args.study == "convergence":
        res = run_convergence_study(quiet)
        _emit(cfg, res.rows)
        curves = (Path(cfg.output).with_name(Path(cfg.output).stem + "_curves.csv")
                  if cfg.output else None)
        if curves is not None:
            write_curves(curves, res.curves)
        for alg, t in res.per_iteration_s.items():
            log.info("%s: %.4g s per iteration, within 10%% of final MSE after %d iterations",
                     alg, t, res.iterations_to_within(alg))
    elif args.study == "sweep":
        _emit(cfg, run_mse_sweep(quiet))
    else:
        _emit(cfg, run_timing_bench(quiet))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointsparse",
                                     description="Jointly sparse recovery experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--output", help="override the config's output path")
        return p

    add("gen", "write the test/validation sets and i.i.d. pilots")
    p = add("solve", "run one algorithm on the configured test set")
    p.add_argument("--alg", required=True, help=f"one of {', '.join(ALGORITHMS)} (any case)")
    add("train", "train the auto-encoder and save its parameters")
    add("eval", "test-set MSE of every configured algorithm")
    p = add("bench", "convergence, MSE-sweep or timing study")
    p.add_argument("--study", required=True, choices=["convergence", "sweep", "timing"])
    return parser


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config, args.output)
        COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
