"""Batch experiment orchestration: the cost-grid x seed battery, per-run
artifact persistence, and cross-run aggregation.

Artifacts under the output directory:

    manifest.json                         every run with its seed and cell
    runs/<mode>_C<cost>_r<idx>/
        meta.json                         params echo, seed, audit settings
        timeseries.csv                    per-period observables
        traders.csv                       per-trader summary
        choices.csv.gz                    per-period arm choices
    aggregates/*.json                     written by aggregate_and_write

Per-run CSVs use a fixed column order (see TIMESERIES_COLUMNS and
TRADER_COLUMNS); floats are serialized with 17 significant digits so files
round-trip bit-exactly, and skipped observations (no trade, degenerate
counterfactual bracket, empty conditioning set) are empty fields. Run
seeds derive from (seed_base, mode index, cost index, run index) via a
splitmix64 mix, so every cell is reproducible in isolation.
"""

from __future__ import annotations

import csv
import dataclasses
import gzip
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import DEFAULT_COST_GRID, MODE_COMPETITIVE, MODE_STRATEGIC, MarketParams
from .engine import RunLog, run_simulation
from .metrics import (
    nan_moving_average,
    run_convergence,
    stickiness_over_time,
    strategy_scatter,
)

TIMESERIES_COLUMNS = [
    "t",
    "F",
    "r_r",
    "P_star",
    "epsilon",
    "P_cf_alpha_min",
    "P_cf_alpha_max",
    "delta",
    "wealth_informed",
    "wealth_uninformed",
    "wealth_total",
    "n_informed",
    "n_alpha1",
    "trades_capped",
]

TRADER_COLUMNS = [
    "trader_id",
    "informed_rounds",
    "frac_alpha1_informed",
    "uninformed_rounds",
    "frac_alpha1_uninformed",
    "final_wealth",
    "converged_arm",
    "converged_flag",
    "optimal_flag",
]

MA_WINDOW = 300
STICKINESS_WINDOW = 300
STICKINESS_THRESHOLD = 0.8
STICK_FRAC = 0.8
OPT_FRAC = 0.5
OUT_DIR_ENV = "SIM_OUT_DIR"

PRESETS = {
    "table1": {"horizon": 2500, "audit": False},
    "convergence": {"horizon": 10000, "tail": 2000, "audit": True, "modes": ("strategic",)},
}

_MODE_INDEX = {MODE_STRATEGIC: 0, MODE_COMPETITIVE: 1}
_MASK64 = 0xFFFFFFFFFFFFFFFF


class ConfigError(ValueError):
    """Configuration problem, reported with the offending field."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_run_seed(seed_base: int, mode: str, cost_index: int, run_index: int) -> int:
    """Stable per-cell seed: chained splitmix64 over the cell coordinates."""
    s = seed_base & _MASK64
    for part in (_MODE_INDEX[mode], cost_index, run_index):
        s = _splitmix64(s ^ (part & _MASK64))
    return s


@dataclass(frozen=True)
class ExperimentConfig:
    """Full battery description: the base market, the cost grid, how many
    seeds per cell, which modes, and audit settings."""

    base: MarketParams = MarketParams()
    cost_grid: tuple[float, ...] = DEFAULT_COST_GRID
    num_runs: int = 50
    modes: tuple[str, ...] = (MODE_STRATEGIC, MODE_COMPETITIVE)
    seed_base: int = 20240601
    output_dir: str | None = None
    tail: int = 2000
    audit: bool = False

    def __post_init__(self) -> None:
        if self.num_runs < 1:
            raise ConfigError("num_runs: must be >= 1")
        if not self.cost_grid:
            raise ConfigError("cost_grid: must be nonempty")
        if any(c < 0 for c in self.cost_grid):
            raise ConfigError("cost_grid: costs must be nonnegative")
        for m in self.modes:
            if m not in _MODE_INDEX:
                raise ConfigError(f"modes: unknown mode {m!r}")
        if not self.modes:
            raise ConfigError("modes: must be nonempty")
        if self.tail < 1:
            raise ConfigError("tail: must be >= 1")
        if self.audit and self.tail > self.base.horizon:
            raise ConfigError("tail: exceeds horizon; audit needs tail <= horizon")

    def cells(self):
        for mode in self.modes:
            for ci, cost in enumerate(self.cost_grid):
                for ri in range(self.num_runs):
                    yield mode, ci, cost, ri

    def cell_params(self, mode: str, cost: float, seed: int) -> MarketParams:
        return self.base.with_updates(mode=mode, info_cost=cost, master_seed=seed)


_MARKET_KEYS = {
    "num_traders",
    "num_shares",
    "initial_payoff",
    "risk_free",
    "payoff_drift",
    "payoff_vol",
    "horizon",
    "exploration",
    "alpha_grid",
    "initial_wealth_range",
}
_TOP_KEYS = {
    "market",
    "cost_grid",
    "num_runs",
    "modes",
    "seed_base",
    "output_dir",
    "preset",
    "tail",
    "audit",
}


def parse_config(raw: dict, preset: str | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON document. Unknown keys
    are errors; ``preset`` (CLI) overrides the document's preset."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")
    market_raw = raw.get("market", {})
    if not isinstance(market_raw, dict):
        raise ConfigError("market: must be an object")
    for key in market_raw:
        if key in ("mode", "info_cost", "master_seed"):
            raise ConfigError(
                f"market.{key}: set per cell by the runner "
                "(use modes / cost_grid / seed_base)"
            )
        if key not in _MARKET_KEYS:
            raise ConfigError(f"market.{key}: unknown key")

    preset_name = preset if preset is not None else raw.get("preset")
    preset_over: dict = {}
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset_name!r}")
        preset_over = dict(PRESETS[preset_name])

    market_kwargs = dict(market_raw)
    if "alpha_grid" in market_kwargs:
        market_kwargs["alpha_grid"] = tuple(market_kwargs["alpha_grid"])
    if "initial_wealth_range" in market_kwargs:
        market_kwargs["initial_wealth_range"] = tuple(market_kwargs["initial_wealth_range"])
    if "horizon" in preset_over:
        market_kwargs["horizon"] = preset_over.pop("horizon")
    try:
        base = MarketParams(**market_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"market: {exc}") from exc

    kwargs = {
        "base": base,
        "cost_grid": tuple(raw.get("cost_grid", DEFAULT_COST_GRID)),
        "num_runs": int(raw.get("num_runs", 50)),
        "modes": tuple(raw.get("modes", (MODE_STRATEGIC, MODE_COMPETITIVE))),
        "seed_base": int(raw.get("seed_base", 20240601)),
        "output_dir": raw.get("output_dir"),
        "tail": int(raw.get("tail", 2000)),
        "audit": bool(raw.get("audit", False)),
    }
    for key, value in preset_over.items():
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path, preset: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
    return parse_config(raw, preset)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    """17-significant-digit float field; nan serializes as an empty field."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.17g}"


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode())


def _cost_tag(cost: float) -> str:
    return f"{cost:g}"


def run_dir_name(mode: str, cost: float, run_index: int) -> str:
    return f"{mode}_C{_cost_tag(cost)}_r{run_index:03d}"


def write_timeseries_csv(path: Path, log: RunLog) -> None:
    buf = []
    out = csv.writer(_ListWriter(buf), lineterminator="\n")
    out.writerow(TIMESERIES_COLUMNS)
    traded = ~np.isnan(log.price)
    for ti in range(len(log)):
        out.writerow(
            [
                ti + 1,
                _fmt(log.payoff[ti]),
                _fmt(log.r_change[ti]),
                _fmt(log.price[ti]),
                _fmt(log.epsilon[ti]),
                _fmt(log.p_cf_alpha_min[ti]),
                _fmt(log.p_cf_alpha_max[ti]),
                _fmt(log.delta[ti]),
                _fmt(log.wealth_informed[ti]),
                _fmt(log.wealth_uninformed[ti]),
                _fmt(log.wealth_total[ti]),
                int(log.n_informed[ti]),
                int(log.n_alpha1[ti]),
                int(log.capped[ti]) if traded[ti] else "",
            ]
        )
    _atomic_write(path, "".join(buf).encode())


class _ListWriter:
    """Minimal file-like adapter so csv.writer can fill a list of strings."""

    def __init__(self, sink: list):
        self.sink = sink

    def write(self, s: str) -> None:
        self.sink.append(s)


def write_traders_csv(path: Path, log: RunLog, audit: bool, tail: int) -> None:
    points = strategy_scatter(log.choices, log.arms)
    if audit:
        conv = run_convergence(log, tail=tail, stick_frac=STICK_FRAC, opt_frac=OPT_FRAC)
    buf = []
    out = csv.writer(_ListWriter(buf), lineterminator="\n")
    out.writerow(TRADER_COLUMNS)
    final_wealth = log.wealth_after[-1]
    for pt in points:
        if audit:
            converged = bool(conv.converged[pt.trader_id])
            row_tail = [
                log.arms[conv.modal_arm[pt.trader_id]].label if converged else "",
                int(converged),
                int(bool(conv.optimal[pt.trader_id])),
            ]
        else:
            row_tail = ["", "", ""]
        out.writerow(
            [
                pt.trader_id,
                pt.informed_rounds,
                _fmt(pt.frac_alpha1_informed),
                pt.uninformed_rounds,
                _fmt(pt.frac_alpha1_uninformed),
                _fmt(final_wealth[pt.trader_id]),
                *row_tail,
            ]
        )
    _atomic_write(path, "".join(buf).encode())


def write_choices_csv_gz(path: Path, log: RunLog) -> None:
    buf = []
    out = csv.writer(_ListWriter(buf), lineterminator="\n")
    out.writerow(["t"] + [f"trader_{i}" for i in range(log.params.num_traders)])
    for ti in range(len(log)):
        out.writerow([ti + 1] + log.choices[ti].tolist())
    payload = gzip.compress("".join(buf).encode(), mtime=0)
    _atomic_write(path, payload)


def write_meta_json(path: Path, log: RunLog, cell: dict, audit: bool, tail: int) -> None:
    meta = {
        "format_version": 1,
        "cell": cell,
        "seed": log.seed,
        "params": dataclasses.asdict(log.params),
        "arms": [a.label for a in log.arms],
        "audit": {
            "enabled": audit,
            "tail": tail,
            "stick_frac": STICK_FRAC,
            "opt_frac": OPT_FRAC,
        },
        "payoff_redraws": log.redraws,
    }
    _write_json(path, meta)


def params_from_meta(meta: dict) -> MarketParams:
    params = dict(meta["params"])
    params["alpha_grid"] = tuple(params["alpha_grid"])
    params["initial_wealth_range"] = tuple(params["initial_wealth_range"])
    return MarketParams(**params)


# ---------------------------------------------------------------------------
# battery execution
# ---------------------------------------------------------------------------


def execute_run(
    config: ExperimentConfig, out_dir: Path, mode: str, cost_index: int, run_index: int
) -> dict:
    """Simulate one (mode, cost, seed) cell and persist its artifacts.
    Returns the manifest entry."""
    cost = config.cost_grid[cost_index]
    seed = derive_run_seed(config.seed_base, mode, cost_index, run_index)
    params = config.cell_params(mode, cost, seed)
    log = run_simulation(params, seed)

    rel = Path("runs") / run_dir_name(mode, cost, run_index)
    rdir = out_dir / rel
    rdir.mkdir(parents=True, exist_ok=True)
    cell = {"mode": mode, "info_cost": cost, "cost_index": cost_index, "run_index": run_index}
    write_timeseries_csv(rdir / "timeseries.csv", log)
    write_traders_csv(rdir / "traders.csv", log, config.audit, config.tail)
    write_choices_csv_gz(rdir / "choices.csv.gz", log)
    write_meta_json(rdir / "meta.json", log, cell, config.audit, config.tail)
    entry = dict(cell)
    entry["seed"] = seed
    entry["dir"] = str(rel)
    entry["files"] = {
        "meta": str(rel / "meta.json"),
        "timeseries": str(rel / "timeseries.csv"),
        "traders": str(rel / "traders.csv"),
        "choices": str(rel / "choices.csv.gz"),
    }
    return entry


def _execute_cell(args) -> dict:
    config, out_dir, mode, cost_index, run_index = args
    return execute_run(config, Path(out_dir), mode, cost_index, run_index)


def resolve_out_dir(
    cli_out: str | None, config: ExperimentConfig, default: str = "sim_out"
) -> Path:
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(default)


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, jobs: int = 1
) -> dict:
    """Execute the full battery and write the manifest. Idempotent: rerunning
    overwrites every artifact with identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, str(out), mode, ci, ri) for mode, ci, _, ri in config.cells()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_execute_cell, tasks))
    else:
        entries = [_execute_cell(t) for t in tasks]
    entries.sort(key=lambda e: (_MODE_INDEX[e["mode"]], e["cost_index"], e["run_index"]))
    manifest = {
        "format_version": 1,
        "config": {
            "market": dataclasses.asdict(config.base),
            "cost_grid": list(config.cost_grid),
            "num_runs": config.num_runs,
            "modes": list(config.modes),
            "seed_base": config.seed_base,
            "tail": config.tail,
            "audit": config.audit,
        },
        "n_runs": len(entries),
        "runs": entries,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def _read_csv_columns(path: Path) -> dict[str, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list[str]] = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(value)
    return cols


def _float_col(cols: dict[str, list[str]], name: str) -> np.ndarray:
    return np.array([float(v) if v != "" else np.nan for v in cols[name]])


def read_timeseries(path: Path) -> dict[str, np.ndarray]:
    cols = _read_csv_columns(path)
    return {name: _float_col(cols, name) for name in TIMESERIES_COLUMNS}


def read_choices(path: Path) -> np.ndarray:
    with gzip.open(path, "rt", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[int(v) for v in row[1:]] for row in reader]
    return np.array(rows, dtype=np.int16)


def _percentile_stats(series_stack: np.ndarray) -> dict:
    return {
        "mean": np.nanmean(series_stack, axis=0).tolist(),
        "p10": np.nanpercentile(series_stack, 10, axis=0).tolist(),
        "p90": np.nanpercentile(series_stack, 90, axis=0).tolist(),
    }


def _jsonable(values) -> list:
    return [None if isinstance(v, float) and math.isnan(v) else v for v in values]


def aggregate_and_write(manifest_path: str | Path, out_dir: str | Path | None = None) -> Path:
    """Fold the per-run files of a completed battery into the figure-ready
    aggregate JSONs. Raises FileNotFoundError listing any absent cells."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = manifest_path.parent
    agg_dir = Path(out_dir) if out_dir else base / "aggregates"
    agg_dir.mkdir(parents=True, exist_ok=True)

    missing = []
    for entry in manifest["runs"]:
        for f in entry["files"].values():
            if not (base / f).exists():
                missing.append(f"{entry['mode']} C={entry['info_cost']} run {entry['run_index']}: {f}")
    if missing:
        raise FileNotFoundError("missing run artifacts:\n" + "\n".join(missing))

    by_cell: dict[tuple[str, float], list[dict]] = {}
    for entry in manifest["runs"]:
        by_cell.setdefault((entry["mode"], entry["info_cost"]), []).append(entry)

    efficiency: dict[str, dict] = {}
    convergence: dict[str, dict] = {}
    for (mode, cost), entries in sorted(
        by_cell.items(), key=lambda kv: (_MODE_INDEX[kv[0][0]], kv[0][1])
    ):
        tag = _cost_tag(cost)
        eps_ma, winf_ma, wun_ma, wtot_ma, delta_ma = [], [], [], [], []
        stick = []
        ebars = []
        scatter_rows = {
            "run_index": [],
            "trader_id": [],
            "informed_rounds": [],
            "frac_alpha1_informed": [],
            "uninformed_rounds": [],
            "frac_alpha1_uninformed": [],
            "final_wealth": [],
        }
        conv_counts, conv_fracs = [], []
        audited = True
        n_arms = None
        for entry in entries:
            ts = read_timeseries(base / entry["files"]["timeseries"])
            ebars.append(float(np.nanmean(ts["epsilon"])))
            eps_ma.append(nan_moving_average(ts["epsilon"], MA_WINDOW))
            winf_ma.append(nan_moving_average(ts["wealth_informed"], MA_WINDOW))
            wun_ma.append(nan_moving_average(ts["wealth_uninformed"], MA_WINDOW))
            wtot_ma.append(nan_moving_average(ts["wealth_total"], MA_WINDOW))
            delta_ma.append(nan_moving_average(ts["delta"], MA_WINDOW))

            with open(base / entry["files"]["meta"]) as fh:
                meta = json.load(fh)
            n_arms = len(meta["arms"])
            choices = read_choices(base / entry["files"]["choices"])
            stick.append(
                stickiness_over_time(choices, n_arms, STICKINESS_WINDOW, STICKINESS_THRESHOLD)
            )

            tr = _read_csv_columns(base / entry["files"]["traders"])
            n_traders = len(tr["trader_id"])
            scatter_rows["run_index"].extend([entry["run_index"]] * n_traders)
            scatter_rows["trader_id"].extend(int(v) for v in tr["trader_id"])
            scatter_rows["informed_rounds"].extend(int(v) for v in tr["informed_rounds"])
            scatter_rows["uninformed_rounds"].extend(int(v) for v in tr["uninformed_rounds"])
            scatter_rows["frac_alpha1_informed"].extend(
                float(v) if v != "" else None for v in tr["frac_alpha1_informed"]
            )
            scatter_rows["frac_alpha1_uninformed"].extend(
                float(v) if v != "" else None for v in tr["frac_alpha1_uninformed"]
            )
            scatter_rows["final_wealth"].extend(float(v) for v in tr["final_wealth"])
            if any(v == "" for v in tr["converged_flag"]):
                audited = False
            else:
                flags = np.array([int(v) for v in tr["converged_flag"]], dtype=bool)
                opts = np.array([int(v) for v in tr["optimal_flag"]], dtype=bool)
                conv_counts.append(int(flags.sum()))
                conv_fracs.append(
                    float((flags & opts).sum() / flags.sum()) if flags.any() else None
                )

        horizon = len(eps_ma[0])
        t_axis = list(range(1, horizon + 1))
        efficiency.setdefault(mode, {})[tag] = {
            "mean": float(np.mean(ebars)),
            "std": float(np.std(ebars, ddof=1)) if len(ebars) > 1 else 0.0,
            "n_runs": len(ebars),
            "per_run": ebars,
        }
        _write_json(
            agg_dir / f"series_{mode}_C{tag}.json",
            {
                "mode": mode,
                "info_cost": cost,
                "window": MA_WINDOW,
                "t": t_axis,
                "epsilon_ma": _jsonable(np.nanmean(np.vstack(eps_ma), axis=0).tolist()),
                "wealth_informed_ma": np.nanmean(np.vstack(winf_ma), axis=0).tolist(),
                "wealth_uninformed_ma": np.nanmean(np.vstack(wun_ma), axis=0).tolist(),
                "wealth_total_ma": np.nanmean(np.vstack(wtot_ma), axis=0).tolist(),
            },
        )
        delta_stack = np.vstack(delta_ma)
        stats = _percentile_stats(delta_stack)
        _write_json(
            agg_dir / f"delta_{mode}_C{tag}.json",
            {
                "mode": mode,
                "info_cost": cost,
                "window": MA_WINDOW,
                "t": t_axis,
                "mean": _jsonable(stats["mean"]),
                "p10": _jsonable(stats["p10"]),
                "p90": _jsonable(stats["p90"]),
            },
        )
        stick_stack = np.vstack(stick).astype(float)
        sstats = _percentile_stats(stick_stack)
        _write_json(
            agg_dir / f"stickiness_{mode}_C{tag}.json",
            {
                "mode": mode,
                "info_cost": cost,
                "window": STICKINESS_WINDOW,
                "threshold": STICKINESS_THRESHOLD,
                "t": t_axis,
                "mean": sstats["mean"],
                "p10": sstats["p10"],
                "p90": sstats["p90"],
            },
        )
        _write_json(
            agg_dir / f"scatter_{mode}_C{tag}.json",
            {"mode": mode, "info_cost": cost, **scatter_rows},
        )
        if audited and conv_counts:
            arr = np.array(conv_counts, dtype=float)
            weights = [c for c, f in zip(conv_counts, conv_fracs) if f is not None]
            vals = [f for f in conv_fracs if f is not None]
            convergence.setdefault(mode, {})[tag] = {
                "mean_converged": float(arr.mean()),
                "std_converged": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "weighted_optimal_fraction": (
                    float(np.average(vals, weights=weights))
                    if vals and sum(weights) > 0
                    else None
                ),
                "per_run_converged": conv_counts,
                "per_run_optimal_fraction": conv_fracs,
            }

    _write_json(agg_dir / "efficiency.json", efficiency)
    if convergence:
        _write_json(agg_dir / "convergence.json", convergence)
    return agg_dir


def audit_run_from_meta(meta_path: str | Path, tail: int | None = None):
    """Re-simulate one persisted run from its metadata and audit it.
    Returns (meta, RunConvergence, RunLog)."""
    with open(meta_path) as fh:
        meta = json.load(fh)
    params = params_from_meta(meta)
    log = run_simulation(params, meta["seed"])
    audit_tail = tail if tail is not None else meta["audit"]["tail"]
    return meta, run_convergence(
        log,
        tail=audit_tail,
        stick_frac=meta["audit"]["stick_frac"],
        opt_frac=meta["audit"]["opt_frac"],
    ), log
