"""Experiment orchestration: multi-governor comparisons and report files.

Report and comparison files are tab-separated text. Header lines start with
``#`` and carry the schema version, the effective configuration (as one
canonical JSON object) and its sha256 hash. Every numeric column is an
integer in the unit named in its header; fractions are written as exact
decimal strings with six places.
"""

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigurationError
from .governor import make_governor
from .pareto import build_library
from .sim import run
from .space import load_space, round_half_up

SCHEMA_VERSION = 1

REPORT_COLUMNS = (
    "governor", "app_id", "released", "completed", "missed", "miss_fraction",
    "p50_us", "p95_us", "max_us", "mean_us", "mean_accuracy_ppm", "switches", "maps",
    "switch_overhead_us", "energy_uj",
)

TIMELINE_COLUMNS = ("t_us", "soc_power_mw", "core_id", "op_index", "apps")


def fraction_str(value, places=6):
    """Exact half-up rounding of a Fraction to a fixed-point decimal string."""
    value = Fraction(value)
    scale = 10**places
    scaled = round_half_up(abs(value) * scale)
    sign = "-" if value < 0 and scaled else ""
    return f"{sign}{scaled // scale}.{scaled % scale:0{places}d}"


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def default_libraries(soc, space=None, params=None, seed=0, k=8):
    """One library per core of ``soc`` built from the (default) space."""
    if space is None:
        space, loaded = load_space()
        params = params if params is not None else loaded
    return {c.core_id: build_library(space, c.core_id, c.kind, params, k=k, seed=seed)
            for c in soc.cores}


def run_config(scenario, soc, libraries, governor, seed):
    """Effective configuration of one run, as recorded in report headers."""
    return {
        "scenario": scenario.to_dict(),
        "soc": soc.to_dict(),
        "libraries": {cid: {"backbone_id": lib.backbone_id, "build": lib.build,
                            "entries": [e.config_hash for e in lib.entries]}
                      for cid, lib in sorted(libraries.items())},
        "governor": {"name": governor.name, "params": governor.get_params()},
        "seed": seed,
    }


def simulate(scenario, soc, libraries, governor, seed=0, record_timeline=True):
    """Run one simulation and attach its effective configuration to the report."""
    report = run(scenario, soc, libraries, governor, seed, record_timeline)
    report.config = run_config(scenario, soc, libraries, governor, seed)
    return report


# --- report files ------------------------------------------------------------


def report_rows(report):
    rows = []
    for a in report.apps:
        rows.append([report.governor, a.app_id, a.released, a.completed, a.missed,
                     fraction_str(a.miss_fraction), a.p50_us, a.p95_us, a.max_us, a.mean_us,
                     a.mean_accuracy_ppm, a.switches, a.maps, "", ""])
    total = report.apps
    rows.append([report.governor, "TOTAL", sum(a.released for a in total),
                 sum(a.completed for a in total), sum(a.missed for a in total),
                 fraction_str(report.miss_fraction), "", "", max((a.max_us for a in total), default=0),
                 "", "", report.switches, report.maps, report.switch_overhead_us,
                 report.energy_uj])
    return rows


def _header(kind, config):
    return [f"# schema_version={SCHEMA_VERSION} kind={kind}",
            f"# config_sha256={config_hash(config)}",
            f"# config={canonical_json(config)}"]


def _tsv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def format_report(reports):
    """Text of a report file for one or more runs of the same scenario."""
    reports = list(reports)
    config = reports[0].config if len(reports) == 1 else {"runs": [r.config for r in reports]}
    rows = [list(REPORT_COLUMNS)]
    for r in reports:
        rows += report_rows(r)
    return "\n".join(_header("report", config)) + "\n" + _tsv(rows)


def write_report(reports, path):
    """Write a report file in a single write."""
    Path(path).write_text(format_report(reports))


def format_timeline(report):
    """Timeline samples as CSV: one row per core per governor tick."""
    if report.timeline is None:
        raise ConfigurationError("report was produced without a timeline")
    rows = [list(TIMELINE_COLUMNS)]
    for s in report.timeline.samples:
        apps = ";".join(f"{a}@{c}:{i}" for a, c, i in s.mapping)
        for core_id, op in s.ops:
            rows.append([s.t_us, s.power_mw, core_id, op, apps])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def write_timeline(report, path):
    Path(path).write_text(format_timeline(report))


# --- comparisons -------------------------------------------------------------


@dataclass
class ComparisonTable:
    """Per-governor results plus deltas ``(baseline - candidate) / baseline``."""

    baseline: str
    app_ids: tuple
    rows: dict  # governor -> metrics dict
    deltas: dict  # governor -> {metric: Fraction or None}
    reports: dict = field(default_factory=dict)

    def delta(self, governor, metric="energy_uj"):
        return self.deltas[governor][metric]

    def columns(self):
        cols = ["governor", "energy_uj", "miss_fraction", "mean_accuracy_ppm", "switches", "maps"]
        cols += [f"p95_us:{a}" for a in self.app_ids]
        cols += ["energy_delta", "miss_delta"] + [f"p95_delta:{a}" for a in self.app_ids]
        return cols

    def format(self):
        config = {"baseline": self.baseline,
                  "runs": {g: r.config for g, r in sorted(self.reports.items())}}
        rows = [self.columns()]
        for g, m in self.rows.items():
            d = self.deltas[g]
            row = [g, m["energy_uj"], fraction_str(m["miss_fraction"]), m["mean_accuracy_ppm"],
                   m["switches"], m["maps"]]
            row += [m["p95_us"][a] for a in self.app_ids]
            row += [_delta_str(d["energy_uj"]), _delta_str(d["miss_fraction"])]
            row += [_delta_str(d["p95_us:" + a]) for a in self.app_ids]
            rows.append(row)
        return "\n".join(_header("comparison", config)) + "\n" + _tsv(rows)


def _delta_str(value):
    return "" if value is None else fraction_str(value)


def _relative(base, cand):
    base, cand = Fraction(base), Fraction(cand)
    if base == 0:
        return Fraction(0) if cand == 0 else None
    return (base - cand) / base


def _metrics(report):
    completed = sum(a.completed for a in report.apps)
    acc = sum(a.mean_accuracy_ppm * a.completed for a in report.apps)
    return {
        "energy_uj": report.energy_uj,
        "miss_fraction": report.miss_fraction,
        "mean_accuracy_ppm": round_half_up(Fraction(acc, completed)) if completed else 0,
        "switches": report.switches,
        "maps": report.maps,
        "p95_us": {a.app_id: a.p95_us for a in report.apps},
    }


def run_compare(scenario, soc, libraries, governor_list, seed=0, baseline=None,
                governor_params=None, record_timeline=False):
    """Run every governor on the same inputs and seed and tabulate the results.

    ``governor_list`` holds names or governor objects; ``baseline`` names one
    of them (default: the first). Configuration errors are re-raised with the
    offending governor's name prefixed.
    """
    governors = []
    for g in governor_list:
        if isinstance(g, str):
            try:
                g = make_governor(g, **(governor_params or {}).get(g, {}))
            except TypeError as exc:
                raise ConfigurationError(f"{g}: {exc}") from None
        governors.append(g)
    if not governors:
        raise ConfigurationError("governor list is empty")
    names = [g.name for g in governors]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"duplicate governors in {names}")
    baseline = names[0] if baseline is None else baseline
    if baseline not in names:
        raise ConfigurationError(f"baseline {baseline!r} is not in the governor list {names}")

    reports = {}
    for g in governors:
        try:
            reports[g.name] = simulate(scenario, soc, libraries, g, seed, record_timeline)
        except ConfigurationError as exc:
            raise type(exc)(f"{g.name}: {exc}") from exc
    rows = {name: _metrics(reports[name]) for name in names}
    base = rows[baseline]
    app_ids = tuple(a.app_id for a in scenario.apps)
    deltas = {}
    for name, m in rows.items():
        d = {"energy_uj": _relative(base["energy_uj"], m["energy_uj"]),
             "miss_fraction": _relative(base["miss_fraction"], m["miss_fraction"])}
        for a in app_ids:
            d["p95_us:" + a] = _relative(base["p95_us"][a], m["p95_us"][a])
        deltas[name] = d
    return ComparisonTable(baseline, app_ids, rows, deltas, reports)


def write_comparison(table, path):
    """Write the comparison table to ``path`` and each run's report beside it."""
    path = Path(path)
    path.write_text(table.format())
    written = [path]
    for name, report in table.reports.items():
        out = path.with_name(f"{path.stem}.{name}.tsv")
        write_report([report], out)
        written.append(out)
    return written
