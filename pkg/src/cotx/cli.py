"""Command-line entry point: ``cotx <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. A JSON file given with ``--config`` supplies defaults
for any flag (and for the solver settings); flags on the command line win.
Every run that writes files also writes its fully resolved configuration
next to them, and ``--config <that file>`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (ComposedMap, CotxError, DataError, NumericalError, Schema, evaluate_map, load_dataset,
                   read_csv_table, write_csv, write_dataset)
from .minimax import ConfigError, MinimaxConfig, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SOLVER_KEYS = {f.name for f in fields(MinimaxConfig)}
THREADS_ENV = "COTX_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- parser


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# (flag, dest, options); defaults live here rather than in argparse so that
# config-file values can slot in underneath explicit flags
COMMANDS = {
    "fit": [
        ("--source", "source", {}), ("--target", "target", {}),
        ("--family", "family", {"choices": ["gaussflow", "composeflow"], "default": "gaussflow"}),
        ("--out", "out", {}), ("--diagnostics", "diagnostics", {}),
        ("--binary", "binary", {"type": _csv_list, "default": [], "help": "comma-separated binary covariates"}),
        ("--seed", "seed", {"type": int}),
    ],
    "apply": [("--map", "map", {}), ("--data", "data", {}), ("--out", "out", {})],
    "kl-estimate": [
        ("--source", "source", {}), ("--target", "target", {}),
        ("--centers", "centers", {"type": int}), ("--iterations", "iterations", {"type": int, "default": 100}),
        ("--seed", "seed", {"type": int, "default": 0}), ("--out", "out", {"help": "also write the JSON here"}),
    ],
    "treatment": [
        ("--table", "table", {}),
        ("--format", "format", {"choices": ["trial", "acic"], "default": "trial"}),
        ("--covariates", "covariates", {"default": "all", "help": "all, binary, none or a comma-separated list"}),
        ("--out-dir", "out_dir", {}), ("--seed", "seed", {"type": int}),
        ("--patient-id", "patient_id", {"help": "column of patient ids; adds per-patient response histograms"}),
    ],
    "color-transfer": [
        ("--mode", "mode", {"choices": ["ot1d", "cot", "ot3d"], "default": "cot"}),
        ("--src", "src", {}), ("--ref", "ref", {}), ("--out", "out", {}),
        ("--superpixels", "superpixels", {"type": int, "default": 1000}),
        ("--compactness", "compactness", {"type": float, "default": 10.0}),
        ("--slic-iters", "slic_iters", {"type": int, "default": 10}),
        ("--seed", "seed", {"type": int}), ("--dump-lab", "dump_lab", {}),
    ],
    "synthetic": [
        ("--name", "name", {"choices": ["unbalanced_identity", "rotation_pair", "gaussian_1d", "acic"]}),
        ("--n", "n", {"type": int}), ("--seed", "seed", {"type": int, "default": 0}),
        ("--out-prefix", "out_prefix", {}),
        ("--m1", "m1", {"type": float, "default": 0.0}), ("--s1", "s1", {"type": float, "default": 1.0}),
        ("--m2", "m2", {"type": float, "default": 0.0}), ("--s2", "s2", {"type": float, "default": 1.0}),
        ("--effect", "effect", {"type": _float_list, "default": [1.0, 0.0, 0.5, 0.0, 0.0, 0.0]}),
    ],
}
REQUIRED = {
    "fit": ["source", "target", "out"],
    "apply": ["map", "data", "out"],
    "kl-estimate": ["source", "target"],
    "treatment": ["table", "out_dir"],
    "color-transfer": ["src", "ref", "out"],
    "synthetic": ["name", "n", "out_prefix"],
}
USES_SOLVER = {"fit", "treatment", "color-transfer"}


def build_parser() -> _Parser:
    parser = _Parser(prog="cotx", description="Conditional optimal transport by sample-based minimax.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, specs in COMMANDS.items():
        p = sub.add_parser(name)
        for flag, dest, opts in specs:
            opts = {k: v for k, v in opts.items() if k != "default"}
            p.add_argument(flag, dest=dest, default=None, **opts)
        p.add_argument("--config", help="JSON file of defaults (flag names or solver settings)")
        p.add_argument("--threads", type=int, default=None, help=f"cap on BLAS threads (also {THREADS_ENV})")
    return parser


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def _load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return doc


def resolve(argv) -> tuple[str, dict, MinimaxConfig | None, int | None]:
    """Parse argv and merge the config file underneath it.

    Returns the command, the resolved flag values, the solver configuration
    (for commands that fit) and the thread cap.
    """
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError("cotx: a subcommand is required: " + ", ".join(COMMANDS))
    cmd = ns.command
    specs = COMMANDS[cmd]
    dests = {dest for _, dest, _ in specs}
    defaults = {dest: opts.get("default") for _, dest, opts in specs}

    doc = _load_config(ns.config) if ns.config else {}
    if doc.get("command", cmd) != cmd:
        raise UsageError(f"config was written for {doc['command']!r}, not {cmd!r}")
    solver_doc = dict(doc.get("solver", {}))
    file_flags = {}
    for key, value in doc.items():
        if key in ("command", "solver"):
            continue
        if key in dests:
            file_flags[key] = value
        elif key in SOLVER_KEYS and cmd in USES_SOLVER:
            solver_doc[key] = value
        else:
            raise UsageError(f"config key {key!r} is not an option of {cmd!r}")

    args = {}
    for dest in sorted(dests):
        given = getattr(ns, dest)
        args[dest] = given if given is not None else file_flags.get(dest, defaults[dest])
    missing = [_flag(d) for d in REQUIRED[cmd] if args[d] is None]
    if missing:
        raise UsageError(f"cotx {cmd}: missing required option(s) {', '.join(missing)}")

    cfg = None
    if cmd in USES_SOLVER:
        if args.get("seed") is not None:
            solver_doc["seed"] = args["seed"]
        try:
            cfg = MinimaxConfig.from_dict(solver_doc)
        except ConfigError as exc:
            raise UsageError(f"invalid solver configuration: {exc}") from None
        args["seed"] = cfg.seed

    threads = ns.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if threads is not None and threads < 1:
        raise UsageError("--threads must be at least 1")
    return cmd, args, cfg, threads


def write_resolved(path, cmd: str, args: dict, cfg: MinimaxConfig | None) -> None:
    doc = {"command": cmd, **args}
    if cfg is not None:
        doc["solver"] = cfg.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _config_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".config.json")


def _parent_exists(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise DataError(f"output directory does not exist: {parent}")


# ---------------------------------------------------------------- commands


def cmd_fit(args, cfg):
    binary = args["binary"]
    source = load_dataset(args["source"], Schema.from_header(_header(args["source"]), binary))
    target = load_dataset(args["target"], Schema.from_header(_header(args["target"]), binary))
    for path in (args["out"], args["diagnostics"]):
        if path:
            _parent_exists(path)
    tmap, diag = fit(source, target, args["family"], cfg)
    tmap.save(args["out"])
    if args["diagnostics"]:
        diag.write_csv(args["diagnostics"])
    write_resolved(_config_path(args["out"]), "fit", args, cfg)
    print(json.dumps({"layers": len(tmap), "final_kl_estimate": diag.final_kl_estimate,
                      "stopped_early": diag.stopped_early}))


def _header(path) -> list[str]:
    return read_csv_table(path)[0]


def cmd_apply(args, cfg):
    tmap = ComposedMap.load(args["map"])
    data = load_dataset(args["data"])
    if data.dims != tmap.input_dims:
        raise DataError(f"{args['data']}: data has dims (d_x, d_z) = {data.dims} "
                        f"but {args['map']} expects {tmap.input_dims}")
    _parent_exists(args["out"])
    mapped = evaluate_map(tmap, data.points, data.covariates)
    write_csv(args["out"], data.column_names, np.hstack([mapped, data.covariates]).tolist())
    write_resolved(_config_path(args["out"]), "apply", args, None)


def cmd_kl(args, cfg):
    from .divergence import AscentConfig, estimate_kl
    source, target = load_dataset(args["source"]), load_dataset(args["target"])
    acfg = AscentConfig(iterations=args["iterations"], n_centers=args["centers"], seed=args["seed"])
    doc = estimate_kl(source, target, acfg).to_json()
    text = json.dumps(doc)
    print(text)
    if args["out"]:
        _parent_exists(args["out"])
        Path(args["out"]).write_text(text + "\n")
        write_resolved(_config_path(args["out"]), "kl-estimate", args, None)


def cmd_treatment(args, cfg):
    from . import treatment as tr
    loader = tr.load_acic_csv if args["format"] == "acic" else tr.load_trial_csv
    table = loader(args["table"], patient_id=args["patient_id"])
    out = Path(args["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    subset = args["covariates"]
    if subset not in ("all", "binary", "none"):
        subset = _csv_list(subset)
    source, target = tr.split_by_treatment(table)
    tr.unbalance_report(source, target).write_csv(out / "unbalance.csv")
    tmap, diag = tr.fit_treatment_map(table, subset, cfg)
    est = tr.effect_for_table(tmap, table, subset)
    tr.write_effects(out / "effects.csv", table, est)
    diag.write_csv(out / "diagnostics.csv")
    tmap.save(out / "map.json")
    if table.patient_id is not None:
        tr.write_patient_comparison(out / "patients.csv", tr.patient_comparison(tmap, table, subset))
    summary = {"effect": est.summary(), "naive_standard_error": tr.naive_standard_error(table),
               "final_kl_estimate": diag.final_kl_estimate}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_resolved(out / "config.json", "treatment", args, cfg)
    print(json.dumps(summary["effect"]))


def cmd_color(args, cfg):
    from . import color
    src, ref = color.read_image(args["src"]), color.read_image(args["ref"])
    for path in (args["out"], args["dump_lab"]):
        if path:
            _parent_exists(path)
    res = color.transfer_lightness_lab(src, ref, args["mode"], cfg, args["superpixels"],
                                       args["compactness"], args["slic_iters"])
    color.write_image(args["out"], res.rgb)
    if args["dump_lab"]:
        color.write_lab_points(args["dump_lab"], res)
    write_resolved(_config_path(args["out"]), "color-transfer", args, cfg)


def cmd_synthetic(args, cfg):
    prefix = args["out_prefix"]
    _parent_exists(prefix + "_x")
    if args["name"] == "acic":
        from .treatment import synth_acic, write_trial_csv
        write_trial_csv(prefix + "_trial.csv", synth_acic(args["n"], args["seed"], args["effect"]))
    else:
        from .synthetic import SyntheticSpec, generate
        try:
            spec = SyntheticSpec(args["name"], args["n"], args["seed"], args["m1"], args["s1"], args["m2"], args["s2"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        source, target, _ = generate(spec)
        write_dataset(prefix + "_source.csv", source)
        write_dataset(prefix + "_target.csv", target)
    write_resolved(prefix + "_config.json", "synthetic", args, None)


HANDLERS = {"fit": cmd_fit, "apply": cmd_apply, "kl-estimate": cmd_kl, "treatment": cmd_treatment,
            "color-transfer": cmd_color, "synthetic": cmd_synthetic}


def run(argv) -> int:
    try:
        cmd, args, cfg, threads = resolve(list(argv))
        with threadpool_limits(limits=threads):
            HANDLERS[cmd](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CotxError, DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
