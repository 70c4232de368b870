"""Command-line entry point: run a d' sweep and write its results.

Settings come from built-in defaults, then an optional INI config file
(section ``[run]``, keys named like the long flags with dashes or
underscores), then command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .gain import QuadratureError
from .grid import GridLayout, LikelihoodModel, StoppingRule
from .policies import ODPredictor, Paradigm, PolicyConfig
from .report import MissingBaselineError, write_comparison_report, write_flash_logs, write_sweep_csv, write_sweep_json
from .simulation import DEFAULT_DPRIMES, ConfigurationError, TrialConfig, run_sweep

log = logging.getLogger("adaptive_speller")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

PARADIGMS = [p.value for p in Paradigm]


@dataclass
class RunSpec:
    paradigms: list = field(default_factory=lambda: list(PARADIGMS))
    dprimes: list = field(default_factory=lambda: list(DEFAULT_DPRIMES))
    trials: int = 1500
    seed: int = 0
    rows: int = 8
    cols: int = 9
    max_flash_size: int = 9
    p_threshold: float = 0.9
    t_max: int = 120
    observation_delay: int = 0
    tti_min: int = 1
    od_predictor: str = ODPredictor.PSEUDO_UPDATE.value
    curve_grid_size: int = 1001
    out: str = "sweep.csv"
    json_out: Optional[str] = None
    report: Optional[str] = None
    report_dprime_below: Optional[float] = None
    log_dir: Optional[str] = None
    jobs: int = 1
    verbosity: int = 0

    @property
    def json_path(self) -> Path:
        return Path(self.json_out) if self.json_out else Path(self.out).with_suffix(".json")

    def trial_config(self) -> TrialConfig:
        return TrialConfig(
            grid=GridLayout(self.rows, self.cols),
            model=LikelihoodModel(),
            rule=StoppingRule(self.p_threshold, self.t_max),
            policy=PolicyConfig(
                paradigm=Paradigm.GREEDY_ADAPTIVE,
                max_flash_size=self.max_flash_size,
                observation_delay=self.observation_delay,
                tti_min=self.tti_min,
                od_predictor=ODPredictor(self.od_predictor),
            ),
            seed=self.seed,
            curve_grid_size=self.curve_grid_size,
        )

    def describe(self) -> dict:
        """Run parameters that affect results (paths and verbosity excluded)."""
        d = asdict(self)
        for key in ("out", "json_out", "report", "log_dir", "jobs", "verbosity"):
            d.pop(key)
        return d


def _bounded_int(lo: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if value < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {value}")
        return value

    return parse


def _seed(text: str) -> int:
    value = _bounded_int(0)(text)
    if value >= 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {value}")
    return value


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")


def _dprime_list(text: str) -> list:
    try:
        values = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty d' list")
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("d' values must be >= 0")
    return values


def _paradigm_list(text: str) -> list:
    names = [t for t in text.replace(",", " ").split()]
    for name in names:
        if name not in PARADIGMS:
            raise argparse.ArgumentTypeError(f"unknown paradigm {name!r} (choose from {', '.join(PARADIGMS)})")
    if not names:
        raise argparse.ArgumentTypeError("empty paradigm list")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adaptive-speller",
        description="Simulate adaptive stimulus selection for an ERP speller over a d' sweep.",
        allow_abbrev=False,
    )
    p.add_argument("--config", metavar="FILE", help="INI file with a [run] section of defaults")
    p.add_argument("--paradigm", dest="paradigms", type=_paradigm_list, action="append", metavar="NAME",
                   help=f"paradigm(s) to run, repeatable or comma-separated ({', '.join(PARADIGMS)})")
    p.add_argument("--dprimes", type=_dprime_list, metavar="LIST", help="comma-separated d' grid")
    p.add_argument("--trials", type=_bounded_int(1), help="trials per (paradigm, d') cell")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--rows", type=_bounded_int(1))
    p.add_argument("--cols", type=_bounded_int(1))
    p.add_argument("--max-flash-size", type=_bounded_int(1))
    p.add_argument("--p-threshold", type=_probability)
    p.add_argument("--t-max", type=_bounded_int(1))
    p.add_argument("--od", dest="observation_delay", type=_bounded_int(0), help="observation delay in flashes")
    p.add_argument("--tti-min", type=_bounded_int(1), help="minimum target-to-target interval")
    p.add_argument("--od-predictor", choices=[m.value for m in ODPredictor])
    p.add_argument("--curve-grid-size", type=_bounded_int(101))
    p.add_argument("--out", metavar="CSV", help="sweep CSV path (JSON mirror written next to it)")
    p.add_argument("--json-out", metavar="JSON")
    p.add_argument("--report", metavar="JSON", help="write comparison against rc-random")
    p.add_argument("--report-dprime-below", type=_float, metavar="D",
                   help="restrict report maxima to d' below this value")
    p.add_argument("--log-dir", metavar="DIR", help="write per-trial flash logs here")
    p.add_argument("--jobs", type=_bounded_int(1), help="worker processes")
    p.add_argument("-v", "--verbose", dest="verbosity", action="count")
    return p


_OPTION_DESTS = {
    "paradigm": "paradigms",
    "paradigms": "paradigms",
    "od": "observation_delay",
    "observation_delay": "observation_delay",
    "verbose": "verbosity",
}


def _read_config(parser: argparse.ArgumentParser, path: str) -> dict:
    cfg = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cfg.read_file(fh)
    except (OSError, configparser.Error) as exc:
        parser.error(f"argument --config: cannot read {path}: {exc}")
    if cfg.sections() != ["run"]:
        parser.error(f"argument --config: {path} must contain exactly one [run] section")
    actions = {a.dest: a for a in parser._actions}
    values = {}
    for key, raw in cfg["run"].items():
        name = key.replace("-", "_")
        dest = _OPTION_DESTS.get(name, name)
        if dest not in actions or dest in ("config", "help"):
            parser.error(f"argument --config: unknown key {key!r} in {path}")
        action = actions[dest]
        flag = action.option_strings[-1]
        convert = int if isinstance(action, argparse._CountAction) else action.type
        try:
            value = convert(raw) if convert else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"argument {flag} (from {path}): {exc}")
        if action.choices and value not in action.choices:
            parser.error(f"argument {flag} (from {path}): invalid choice {value!r}")
        values[dest] = value
    return values


def parse_args(argv: Optional[Sequence[str]] = None) -> RunSpec:
    """Merge defaults, config file and flags into a validated :class:`RunSpec`.

    Exits with status 2 and a message naming the offending flag on any
    usage or range error.
    """
    parser = build_parser()
    ns = parser.parse_args(argv)
    spec = RunSpec()
    merged = {}
    if ns.config:
        merged.update(_read_config(parser, ns.config))
    for key, value in vars(ns).items():
        if key != "config" and value is not None:
            merged[key] = value
    if isinstance(merged.get("paradigms"), list) and merged["paradigms"] and isinstance(merged["paradigms"][0], list):
        merged["paradigms"] = [p for group in merged["paradigms"] for p in group]
    for key, value in merged.items():
        setattr(spec, key, value)
    spec.paradigms = list(dict.fromkeys(spec.paradigms))
    _validate(parser, spec)
    return spec


def _validate(parser: argparse.ArgumentParser, spec: RunSpec) -> None:
    n_chars = spec.rows * spec.cols
    if n_chars < 2:
        parser.error(f"arguments --rows/--cols: grid must hold at least 2 characters, got {n_chars}")
    if spec.max_flash_size > n_chars:
        parser.error(f"argument --max-flash-size: {spec.max_flash_size} exceeds the {n_chars}-character grid")
    if "greedy-adaptive" in spec.paradigms and n_chars - (spec.tti_min - 1) * spec.max_flash_size < 1:
        parser.error(
            f"argument --tti-min: {spec.tti_min} with --max-flash-size {spec.max_flash_size} can block "
            f"the whole {n_chars}-character grid"
        )
    if spec.report and "rc-random" not in spec.paradigms:
        parser.error("argument --report: the comparison needs rc-random among the --paradigm values")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        spec = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=logging.WARNING - 10 * min(spec.verbosity, 2),
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    label = f"od={spec.observation_delay},tti_min={spec.tti_min}"
    try:
        sweep = run_sweep(
            spec.trial_config(),
            dprimes=spec.dprimes,
            paradigms=spec.paradigms,
            trials=spec.trials,
            n_jobs=spec.jobs,
            keep_results=spec.log_dir is not None,
            label=label,
        )
        write_sweep_csv(sweep, spec.out)
        write_sweep_json(sweep, spec.json_path, run=spec.describe())
        if spec.report:
            write_comparison_report({label: sweep}, spec.report, dprime_below=spec.report_dprime_below)
        if spec.log_dir:
            write_flash_logs(sweep, spec.log_dir)
    except (ConfigurationError, QuadratureError, MissingBaselineError, OSError) as exc:
        print(f"adaptive-speller: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for cell in sweep.rows():
        print(f"{cell.paradigm:16s} d'={cell.dprime:5.2f}  acc={cell.accuracy:.3f}  est={cell.est_scored:6.1f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
