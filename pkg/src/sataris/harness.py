"""Monte Carlo experiment runner, sweeps and result export."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bcd import FIXED_DEPLOYMENT, PROPOSED, SCHEMES, WITHOUT_RIS, run_bcd
from .channel import ChannelModel
from .rates import RateReport
from .scenario import ConfigError, ScenarioConfig, desk_config, sample_topology

SCHEMA_VERSION = 1
OUTPUT_ENV = "SATARIS_OUT"

AXES = ("E_sub", "N", "upsilon", "beta", "P_T", "H")
COLUMNS = ("schema_version", "point", "E_sub", "N", "upsilon", "beta", "P_T", "H", "seed", "scheme",
           "status", "objective", "group_rates", "max_eve_rate", "iterations", "channel_hash")
TIMING_COLUMN = "wall_time"

FIGURE_AXES = {
    3: dict(E_sub=(4, 8, 16), N=(4, 8)),
    4: dict(upsilon=(0.5, 1.0, 2.0, 4.0, 50.0, 100.0), N=(4, 8)),
    5: dict(beta=(2.0, 2.3, 2.6), N=(4, 8)),
    6: dict(P_T=(25.0, 50.0, 100.0), N=(4, 8)),
    7: dict(H=(50.0, 100.0, 200.0), beta=(2.0, 2.3, 2.6)),
}


def apply_point(cfg: ScenarioConfig, point: dict) -> ScenarioConfig:
    """Scenario at one sweep point."""
    mapping = dict(E_sub="E_sub", N="N", beta="path_loss_exponent", P_T="P_T", H="aris_altitude")
    changes = {}
    for name, value in point.items():
        if name == "upsilon":
            changes["wiretap_threshold"] = (float(value),)
        elif name in mapping:
            changes[mapping[name]] = int(value) if name in ("E_sub", "N") else float(value)
        else:
            raise ConfigError(f"unknown sweep axis {name!r}", name)
    return cfg.replace(**changes)


@dataclass(frozen=True)
class ExperimentSpec:
    config: ScenarioConfig = field(default_factory=desk_config)
    axes: dict = field(default_factory=dict)            # axis name -> tuple of values
    trials: int = 20
    seed_base: int = 0
    schemes: tuple = SCHEMES
    out_dir: str | None = None

    def validate(self) -> "ExperimentSpec":
        if self.trials < 1:
            raise ConfigError("trials must be >= 1", "trials")
        for name, values in self.axes.items():
            if name not in AXES:
                raise ConfigError(f"unknown sweep axis {name!r}", name)
            if len(values) == 0:
                raise ConfigError(f"sweep axis {name!r} is empty", name)
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ConfigError(f"schemes must be a non-empty subset of {SCHEMES}", "schemes")
        self.config.validate()
        for p in self.grid():
            apply_point(self.config, p).validate()
        return self

    def grid(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    @property
    def seeds(self) -> list[int]:
        return [self.seed_base + t for t in range(self.trials)]


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def mean_objective(self, scheme: str, **point) -> float:
        vals = [r["objective"] for r in self.select(scheme=scheme, **point) if r["status"] == "ok"]
        return float(np.mean(vals)) if vals else math.nan

    def to_json(self, timing: bool = False) -> str:
        cols = COLUMNS + ((TIMING_COLUMN,) if timing else ())
        rows = [{c: r.get(c) for c in cols} for r in self.rows]
        return json.dumps(dict(schema_version=self.schema_version, columns=list(cols), rows=rows),
                          indent=1, sort_keys=False, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ResultsTable":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {data.get('schema_version')}")
        rows = []
        for r in data["rows"]:
            r = dict(r)
            if isinstance(r.get("group_rates"), list):
                r["group_rates"] = [float(x) for x in r["group_rates"]]
            rows.append(r)
        return cls(rows, data["schema_version"])

    def to_csv(self, timing: bool = False) -> str:
        cols = COLUMNS + ((TIMING_COLUMN,) if timing else ())
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.rows:
            writer.writerow([_csv_cell(r.get(c)) for c in cols])
        return buf.getvalue()


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


def _row(point_id: int, point: dict, seed: int, scheme: str) -> dict:
    row = dict.fromkeys(COLUMNS)
    row.update(schema_version=SCHEMA_VERSION, point=point_id, seed=seed, scheme=scheme)
    for name in AXES:
        row[name] = float(point[name]) if name in point else None
    return row


def _report_fields(report: RateReport) -> dict:
    return dict(objective=float(report.objective),
                group_rates=[float(x) for x in report.group_min],
                max_eve_rate=float(report.max_eve_rate))


def realization_hash(cfg: ScenarioConfig, seed: int) -> str:
    """Digest of the random channel realization of (cfg, seed), evaluated at the
    reference ARIS placement; identical for every scheme run on the same draw."""
    topo = sample_topology(cfg, seed)
    return ChannelModel(cfg, topo, seed).build(topo.aris_initial).digest()


def run_trial(cfg: ScenarioConfig, point_id: int, point: dict, seed: int, schemes) -> list[dict]:
    """All enabled schemes on one (point, seed); per-scheme failures become rows."""
    rows = []
    ref = realization_hash(cfg, seed)
    for scheme in schemes:
        row = _row(point_id, point, seed, scheme)
        t0 = time.perf_counter()
        try:
            res = run_bcd(cfg, seed, scheme)
            row.update(_report_fields(res.report))
            row["iterations"] = int(sum(res.trace.iterations[b] for b in
                                        ("tx", "reflection", "association", "deployment")))
            row["channel_hash"] = ChannelModel(cfg, res.topology, seed).build(res.topology.aris_initial).digest()
            row["status"] = res.status
            if row["channel_hash"] != ref:
                row["status"] = "error: channel realization mismatch"
        except Exception as exc:  # recorded in-row, the experiment continues
            row["status"] = f"error: {type(exc).__name__}: {exc}"
            row["channel_hash"] = ref
            row["traceback"] = traceback.format_exc(limit=3)
        row[TIMING_COLUMN] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _trial_task(args):
    return run_trial(*args)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ResultsTable:
    """Every (grid point, seed) with all enabled schemes; rows in (point, seed, scheme) order."""
    spec.validate()
    tasks = [(apply_point(spec.config, point), pid, point, seed, tuple(spec.schemes))
             for pid, point in enumerate(spec.grid()) for seed in spec.seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial_task, tasks))
    else:
        chunks = [_trial_task(t) for t in tasks]
    return ResultsTable([row for chunk in chunks for row in chunk])


def export_results(table: ResultsTable, out_dir, formats=("csv", "json"), stem: str = "results",
                   timing: bool = False) -> list[Path]:
    """Write the table; wall time is excluded unless ``timing`` so that reruns are byte-identical."""
    if not len(table):
        raise ValueError("empty results table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            text = table.to_csv(timing)
        elif fmt == "json":
            text = table.to_json(timing)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        path = out / f"{stem}.{fmt}"
        path.write_text(text)
        paths.append(path)
    return paths


def figure_spec(figure: int, base: ExperimentSpec | None = None) -> ExperimentSpec:
    if figure not in FIGURE_AXES:
        raise ValueError(f"figure must be one of {sorted(FIGURE_AXES)}")
    base = base or ExperimentSpec()
    return ExperimentSpec(base.config, dict(FIGURE_AXES[figure]), base.trials, base.seed_base,
                          base.schemes, base.out_dir)


def sweep_figure_data(spec: ExperimentSpec, figure: int, workers: int = 1) -> ResultsTable:
    return run_experiment(figure_spec(figure, spec), workers)


def baseline_without_ris(cfg: ScenarioConfig, seed: int) -> RateReport:
    return run_bcd(cfg, seed, WITHOUT_RIS).report


def baseline_fixed_deployment(cfg: ScenarioConfig, seed: int, positions=None) -> RateReport:
    return run_bcd(cfg, seed, FIXED_DEPLOYMENT, q0=positions).report


def proposed(cfg: ScenarioConfig, seed: int) -> RateReport:
    return run_bcd(cfg, seed, PROPOSED).report


def default_out_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "results")


_EXPERIMENT_KEYS = ("base", "trials", "seed_base", "schemes", "out_dir")


def load_experiment(text: str) -> ExperimentSpec:
    """Experiment file: scenario ``key = value`` lines plus ``base`` (desk or full),
    ``trials``, ``seed_base``, ``schemes``, ``out_dir`` and ``sweep.<axis> = v1, v2, ...``."""
    from .scenario import parse_config_text
    scenario_lines, exp = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        key = body.split("=", 1)[0].strip() if "=" in body else ""
        if key in _EXPERIMENT_KEYS or key.startswith("sweep."):
            if key in exp:
                raise ConfigError(f"duplicate key (line {lineno})", key)
            exp[key] = body.split("=", 1)[1].strip()
        else:
            scenario_lines.append(line)
    overrides = parse_config_text("\n".join(scenario_lines))
    base = exp.get("base", "desk")
    if base == "desk":
        cfg = desk_config(**overrides)
    elif base == "full":
        cfg = ScenarioConfig(**overrides)
    else:
        raise ConfigError("base must be 'desk' or 'full'", "base")
    axes = {}
    for key, raw in exp.items():
        if key.startswith("sweep."):
            name = key[len("sweep."):]
            try:
                axes[name] = tuple(float(v) for v in raw.split(",") if v.strip())
            except ValueError:
                raise ConfigError(f"bad sweep values {raw!r}", key) from None
    try:
        trials = int(exp.get("trials", 20))
        seed_base = int(exp.get("seed_base", 0))
    except ValueError as exc:
        raise ConfigError(str(exc), "trials") from None
    schemes = tuple(s.strip() for s in exp.get("schemes", ",".join(SCHEMES)).split(",") if s.strip())
    return ExperimentSpec(cfg, axes, trials, seed_base, schemes, exp.get("out_dir")).validate()


def summarize(table: ResultsTable) -> str:
    """Mean objective per (point, scheme), one line each."""
    lines = []
    keys = sorted({(r["point"], r["scheme"]) for r in table.rows},
                  key=lambda k: (k[0], SCHEMES.index(k[1])))
    for pid, scheme in keys:
        rows = table.select(point=pid, scheme=scheme)
        ok = [r for r in rows if r["status"] == "ok"]
        point = {a: rows[0][a] for a in AXES if rows[0][a] is not None}
        mean = np.mean([r["objective"] for r in ok]) if ok else math.nan
        lines.append(f"point {pid} {point} {scheme:17s} mean objective {mean:.4f} "
                     f"({len(ok)}/{len(rows)} ok)")
    return "\n".join(lines)
