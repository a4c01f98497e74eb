"""Command line interface.

Every command prints CSV (or JSON for ``fit``) to ``--out`` or standard
output and, when ``--out`` is given, writes a run manifest next to it
(``<out>.manifest.json``).  ``phaseage replay MANIFEST`` re-runs a
manifest.

Exit codes: 0 success, 2 invalid input, 3 too few accepted Monte Carlo
samples.  Error details go to standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InsufficientAcceptance, InvalidModel, PhaseAgeError
from .fitting import (MortalityTable, black_robin_parameters, black_robin_table,
                      fit_coxian, mortality_curve)
from .multi_obs import PhaseSequence, age_at_kth_observation, lifetime_given_death_at_next
from .ph_model import coxian, load_model, mean_lifetime
from .pyramid import DEFAULT_CLASSES, PhaseFrequencies, compute_pyramid
from .schemes import (PoissonBirth, PoissonObs, RareLimit, UniformObs, age_given_phase,
                      entry_time_given_phase, sojourn_given_phase)
from .simulator import SimulationConfig, empirical_conditional

EXIT_INPUT = 2
EXIT_ACCEPTANCE = 3
DEFAULT_POINTS = 200


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


@dataclass
class RunManifest:
    command: str
    argv: list
    inputs: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path):
        manifest = cls.from_json(Path(path).read_text())
        missing = [p for p in manifest.inputs.values() if not Path(p).is_file()]
        if missing:
            raise InputError(f"manifest inputs missing: {missing}")
        return manifest


PATH_FLAGS = ("--model", "--table", "--fp", "--out", "--curve", "--manifest")


def absolute_argv(argv):
    """``argv`` with the values of file flags made absolute."""
    out = list(argv)
    for i, a in enumerate(out[:-1]):
        if a in PATH_FLAGS:
            out[i + 1] = str(Path(out[i + 1]).resolve())
    return out


def fmt(x):
    return f"{float(x):.17g}"


def write_csv(header, rows, meta=()):
    out = io.StringIO()
    for line in meta:
        out.write(f"#{line}\r\n")
    w = csv.writer(out, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return out.getvalue()


def parse_grid(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise InputError(f"grid must look like lo:hi:n, got {text!r}") from None
    if not (0 <= lo <= hi) or n < 1:
        raise InputError(f"bad grid {text!r}: need 0 <= lo <= hi and n >= 1")
    return np.linspace(lo, hi, n)


def parse_seq(text):
    try:
        phases = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise InputError(f"sequence must be comma-separated phase numbers, got {text!r}") from None
    return phases


def _scheme(args):
    name = args.scheme
    if name == "poisson":
        if args.gamma is None:
            raise InputError("--scheme poisson needs --gamma")
        return PoissonObs(args.gamma)
    if name == "uniform":
        if args.t is None:
            raise InputError("--scheme uniform needs --t")
        return UniformObs(args.t)
    if name == "rare":
        return RareLimit()
    return PoissonBirth()


def _model(path):
    if not Path(path).is_file():
        raise InputError(f"model file not found: {path}")
    return load_model(path)


def _grid(args, ph, scheme=None):
    if args.grid:
        return parse_grid(args.grid)
    hi = scheme.horizon if isinstance(scheme, UniformObs) else 10.0 * mean_lifetime(ph)
    return np.linspace(0.0, hi, DEFAULT_POINTS)


def cmd_age_dist(args):
    ph = _model(args.model)
    scheme = _scheme(args)
    law = age_given_phase(ph, scheme, args.phase)
    grid = _grid(args, ph, scheme)
    return write_csv(["s", "cdf", "density"], zip(grid, law.cdf(grid), law.density(grid)))


def cmd_entry_sojourn(args):
    ph = _model(args.model)
    scheme = _scheme(args)
    entry = entry_time_given_phase(ph, scheme, args.phase)
    sojourn = sojourn_given_phase(ph, scheme, args.phase)
    grid = _grid(args, ph, scheme)
    meta = [f"entry_atom_at_zero={fmt(entry.atom_at_zero)};sojourn_atom_at_zero={fmt(sojourn.atom_at_zero)}"]
    rows = zip(grid, entry.cdf(grid), entry.density(grid), sojourn.cdf(grid), sojourn.density(grid))
    return write_csv(["s", "entry_cdf", "entry_density", "sojourn_cdf", "sojourn_density"], rows, meta)


def cmd_multi(args):
    ph = _model(args.model)
    seq = PhaseSequence(parse_seq(args.seq))
    age = age_at_kth_observation(ph, args.gamma, seq)
    header = ["s", "age_cdf", "age_density"]
    cols = []
    meta = [f"sequence_probability={fmt(age.sequence_probability)}"]
    life = None
    if args.death:
        life = lifetime_given_death_at_next(ph, args.gamma, PhaseSequence(seq.phases, True))
        header += ["lifetime_cdf", "lifetime_density"]
        meta.append(f"death_sequence_probability={fmt(life.sequence_probability)}")
    if args.grid:
        grid = parse_grid(args.grid)
    else:
        grid = np.linspace(0.0, (life or age).quantile(0.9999), DEFAULT_POINTS)
    cols = [grid, age.cdf(grid), age.density(grid)]
    if life is not None:
        cols += [life.cdf(grid), life.density(grid)]
    return write_csv(header, zip(*cols), meta)


def cmd_fit(args):
    if args.table:
        path = Path(args.table)
        if not path.is_file():
            raise InputError(f"table file not found: {path}")
        table = MortalityTable.load(path)
    else:
        table = black_robin_table()
    initial = []
    if args.include_published:
        if args.m != 13:
            raise InputError("--include-published needs --m 13")
        initial.append(black_robin_parameters())
    result = fit_coxian(table, args.m, starts=args.starts, seed=args.seed, initial=initial,
                        max_evals=args.max_evals)
    if args.curve:
        curve = mortality_curve(coxian(result.params), len(table.rates))
        Path(args.curve).write_text(write_csv(
            ["age_class_start", "observed_rate", "model_rate"],
            zip(table.ages, table.rates, curve)))
    return json.dumps(result.to_dict(), indent=2) + "\n"


def cmd_pyramid(args):
    ph = _model(args.model)
    if not Path(args.fp).is_file():
        raise InputError(f"phase frequency file not found: {args.fp}")
    fp = PhaseFrequencies.load(args.fp)
    classes = DEFAULT_CLASSES
    if args.classes:
        try:
            classes = tuple(float(x) for x in args.classes.split(","))
        except ValueError:
            raise InputError(f"bad class list {args.classes!r}") from None
    try:
        pyramid = compute_pyramid(ph, fp, classes)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return pyramid.to_csv()


def cmd_simulate(args):
    ph = _model(args.model)
    scheme = _scheme(args)
    if args.target.startswith("multi"):
        if not args.seq:
            raise InputError(f"target {args.target} needs --seq")
        condition = PhaseSequence(parse_seq(args.seq), args.target == "multi_lifetime")
    else:
        if args.phase is None:
            raise InputError(f"target {args.target} needs --phase")
        condition = args.phase
    config = SimulationConfig(args.n, args.seed, scheme, batch=args.batch,
                              min_accepted=args.min_accepted)
    result = empirical_conditional(config, ph, args.target, condition)
    grid = parse_grid(args.grid) if args.grid else np.linspace(
        0.0, float(result.samples[-1]), DEFAULT_POINTS)
    return result.to_csv(grid)


COMMANDS = {
    "age-dist": cmd_age_dist,
    "entry-sojourn": cmd_entry_sojourn,
    "multi": cmd_multi,
    "fit": cmd_fit,
    "pyramid": cmd_pyramid,
    "simulate": cmd_simulate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="phaseage", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--out", help="output file (default: standard output)")
        sp.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")

    def scheme_flags(sp, default="poisson"):
        sp.add_argument("--scheme", choices=["birth", "poisson", "uniform", "rare"], default=default)
        sp.add_argument("--gamma", type=float, help="Poisson observation rate")
        sp.add_argument("--t", type=float, help="uniform observation horizon")

    sp = sub.add_parser("age-dist", help="age at observation given the observed phase")
    common(sp)
    scheme_flags(sp)
    sp.add_argument("--phase", type=int, required=True)
    sp.add_argument("--grid", help="lo:hi:n")

    sp = sub.add_parser("entry-sojourn", help="phase entry time and sojourn given the observed phase")
    common(sp)
    scheme_flags(sp)
    sp.add_argument("--phase", type=int, required=True)
    sp.add_argument("--grid", help="lo:hi:n")

    sp = sub.add_parser("multi", help="age (and lifetime) given a sequence of Poisson observations")
    common(sp)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--seq", required=True, help="observed phases, e.g. 1,2,3,3,4")
    sp.add_argument("--death", action="store_true", help="next observation found the individual dead")
    sp.add_argument("--grid", help="lo:hi:n")

    sp = sub.add_parser("fit", help="least-squares Coxian fit to a mortality table")
    common(sp, model=False)
    sp.add_argument("--table", help="CSV with header age_class_start,rate (default: built-in table)")
    sp.add_argument("--m", type=int, default=13, help="number of phases")
    sp.add_argument("--starts", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-evals", type=int, default=100_000)
    sp.add_argument("--include-published", action="store_true",
                    help="also start from the published 13-phase parameters")
    sp.add_argument("--curve", help="write observed and fitted mortality rates to this CSV")

    sp = sub.add_parser("pyramid", help="age pyramid from phase frequencies")
    common(sp)
    sp.add_argument("--fp", required=True, help="CSV with header phase,frequency")
    sp.add_argument("--classes", help="comma-separated class starts, last class open")

    sp = sub.add_parser("simulate", help="Monte Carlo estimate with a 0.99 DKW band")
    common(sp)
    scheme_flags(sp)
    sp.add_argument("--target", required=True,
                    choices=["age", "entry_time", "sojourn", "multi_age", "multi_lifetime"])
    sp.add_argument("--phase", type=int)
    sp.add_argument("--seq")
    sp.add_argument("--n", type=int, default=100_000, help="simulated individuals (per segment for sequences)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch", type=int, default=1 << 16)
    sp.add_argument("--min-accepted", type=int, default=1000)
    sp.add_argument("--grid", help="lo:hi:n")

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    return p


def _fail(code, kind, message, violations=()):
    doc = {"error": kind, "message": message}
    if violations:
        doc["violations"] = [{"code": c, "message": m} for c, m in violations]
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def _manifest(args, argv):
    params = {k: v for k, v in vars(args).items()
              if k not in ("command", "out", "manifest", "model", "table", "fp", "curve")}
    inputs = {k: str(Path(getattr(args, k)).resolve())
              for k in ("model", "table", "fp") if getattr(args, k, None)}
    outputs = {"out": str(Path(args.out).resolve())}
    if getattr(args, "curve", None):
        outputs["curve"] = str(Path(args.curve).resolve())
    return RunManifest(args.command, absolute_argv(argv), inputs, params, outputs)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else 0

    if args.command == "replay":
        try:
            manifest = RunManifest.load(args.manifest)
        except (OSError, ValueError, TypeError, InputError) as exc:
            return _fail(EXIT_INPUT, "manifest", str(exc))
        return main(manifest.argv)

    try:
        text = COMMANDS[args.command](args)
    except InvalidModel as exc:
        return _fail(EXIT_INPUT, "validation", str(exc), exc.violations)
    except InsufficientAcceptance as exc:
        return _fail(EXIT_ACCEPTANCE, "insufficient_acceptance", str(exc))
    except (InputError, PhaseAgeError, ValueError, IndexError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))

    if args.out:
        Path(args.out).write_text(text)
        manifest_path = args.manifest or f"{args.out}.manifest.json"
        Path(manifest_path).write_text(_manifest(args, argv).to_json())
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
