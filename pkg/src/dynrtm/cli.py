"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad flags or input files),
2 runtime or configuration error.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .compare import run_compare, simulate, write_comparison, write_report, write_timeline
from .errors import ConfigurationError, DynRTMError, MissingFileError, ValidationError
from .governor import GOVERNORS, make_governor
from .pareto import SubnetLibraryBuilder, emit_library, load_library, load_libraries
from .scenario import parse_scenario
from .soc import load_soc
from .space import emit_profiles, emit_space, load_profiles, load_space, profile_config, \
    read_json, sample_configs

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

# flag name -> governor parameter it sets
TUNABLES = {
    "margin": float,
    "hysteresis": int,
    "outer_every": int,
    "rho_cap": float,
    "headroom": float,
    "tick_us": int,
    "window": int,
    "monitor_period_us": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _progress(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _governor_params(args, name):
    """Merge ``--config`` file values with explicit flags for one governor."""
    params = {}
    if args.config:
        doc = read_json(args.config)
        if not isinstance(doc, dict):
            raise ValidationError("expected an object of governor name -> parameters", "config")
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ValidationError("expected an object of parameters", f"config.{name}")
        params.update(section)
    for key in TUNABLES:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    accepted = GOVERNORS[name]().get_params() if name in GOVERNORS else {}
    # flags meant for another governor are ignored; config-file keys must match
    explicit = {k for k in TUNABLES if getattr(args, k) is not None}
    unknown = sorted(set(params) - set(accepted) - explicit)
    if unknown:
        raise ConfigurationError(f"{name}: unknown parameter(s) {unknown}")
    return {k: v for k, v in params.items() if k in accepted}


def _out(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _libraries(args):
    return load_libraries(args.libs)


def cmd_gen_space(args):
    space, params = load_space(args.base)
    space = replace(space, seed=args.seed)
    soc = load_soc(args.soc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_space(space, params, out / "space.json")
    cores = {c.core_id: c.kind for c in soc.cores}
    profiles = [profile_config(c, cores, params, space)
                for c in sample_configs(space, args.n, args.seed)]
    emit_profiles(profiles, out / "profiles.jsonl")
    _progress(args, f"wrote {out / 'space.json'} and {len(profiles)} profiles")
    return EXIT_OK


def cmd_build_library(args):
    space, params = load_space(args.space)
    soc = load_soc(args.soc)
    core = soc.core(args.core)
    builder = SubnetLibraryBuilder(core_id=core.core_id, core_kind=core.kind,
                                   n_random=args.n_random, n_evolve=args.n_evolve, k=args.k,
                                   seed=args.seed, cost_params=params)
    if args.profiles:
        builder.fit_profiles(load_profiles(args.profiles), space)
    else:
        builder.fit(space)
    emit_library(builder.library_, _out(args.out))
    _progress(args, f"wrote {len(builder.library_)} entries for {core.core_id} to {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    scenario = parse_scenario(args.scenario)
    soc = load_soc(args.soc)
    libs = _libraries(args)
    if args.governor not in GOVERNORS:
        raise ConfigurationError(f"unknown governor {args.governor!r}; "
                                 f"choose from {sorted(GOVERNORS)}")
    governor = make_governor(args.governor, **_governor_params(args, args.governor))
    report = simulate(scenario, soc, libs, governor, args.seed, record_timeline=bool(args.timeline))
    write_report([report], _out(args.out))
    if args.timeline:
        write_timeline(report, _out(args.timeline))
    _progress(args, f"{governor.name}: energy {report.energy_uj} uJ, "
                    f"miss fraction {float(report.miss_fraction):.4f} -> {args.out}")
    return EXIT_OK


def cmd_compare(args):
    scenario = parse_scenario(args.scenario)
    soc = load_soc(args.soc)
    libs = _libraries(args)
    names = [n.strip() for n in args.governors.split(",") if n.strip()]
    for n in names:
        if n not in GOVERNORS:
            raise ConfigurationError(f"unknown governor {n!r}; choose from {sorted(GOVERNORS)}")
    params = {n: _governor_params(args, n) for n in names}
    table = run_compare(scenario, soc, libs, names, args.seed, args.baseline, params)
    written = write_comparison(table, _out(args.out))
    for name in names:
        m, d = table.rows[name], table.deltas[name]
        delta = "n/a" if d["energy_uj"] is None else f"{float(d['energy_uj']):+.2%}"
        _progress(args, f"{name}: energy {m['energy_uj']} uJ ({delta} vs {table.baseline}), "
                        f"miss fraction {float(m['miss_fraction']):.4f}")
    _progress(args, "wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def cmd_validate(args):
    checks = [("scenario", parse_scenario), ("soc", load_soc), ("lib", load_library),
              ("space", load_space), ("profiles", load_profiles)]
    done = 0
    for flag, loader in checks:
        path = getattr(args, flag)
        if path:
            loader(path)
            done += 1
            _progress(args, f"{path}: ok")
    if not done:
        raise UsageError("validate: give at least one of --scenario, --soc, --lib, --space, "
                         "--profiles")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="dynrtm", description="Runtime manager simulator for dynamic DNNs.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
        return p

    p = command("gen-space", cmd_gen_space, "emit a search space and synthetic profiles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=1000, help="number of profiled configs")
    p.add_argument("--base", help="space file to copy dimensions and cost model from")
    p.add_argument("--soc", help="SoC file naming the profiled cores")

    p = command("build-library", cmd_build_library, "build one core's sub-network library")
    p.add_argument("--space", help="space file (default: bundled)")
    p.add_argument("--soc", help="SoC file (default: bundled)")
    p.add_argument("--core", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-random", type=int, default=1000)
    p.add_argument("--n-evolve", type=int, default=200)
    p.add_argument("--profiles", help="build from a profile file instead of the cost models")
    p.add_argument("--out", required=True)

    def run_flags(p):
        p.add_argument("--scenario", required=True)
        p.add_argument("--soc", help="SoC file (default: bundled)")
        p.add_argument("--libs", required=True, help="directory of *.lib.json files")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--config", help="JSON file: governor name -> parameter overrides")
        for key, typ in TUNABLES.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)

    p = command("simulate", cmd_simulate, "simulate one governor on a scenario")
    run_flags(p)
    p.add_argument("--governor", required=True, help=", ".join(sorted(GOVERNORS)))
    p.add_argument("--timeline", help="also write the timeline CSV here")

    p = command("compare", cmd_compare, "compare governors on a scenario")
    run_flags(p)
    p.add_argument("--governors", required=True, help="comma-separated governor names")
    p.add_argument("--baseline", help="governor the deltas are relative to (default: first)")

    p = command("validate", cmd_validate, "schema-check input files")
    for flag in ("scenario", "soc", "lib", "space", "profiles"):
        p.add_argument("--" + flag)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_INVALID
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, MissingFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigurationError, DynRTMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
