"""Render figures from a simulation battery's persisted artifacts.

Reads only the runner's documented files (manifest.json plus the
aggregate JSONs produced by ``aggregate``); it never invokes the
simulator. Inputs are schema-checked before any plotting so a malformed
or stale aggregate fails with the offending file and key named.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = (
    "efficiency_bars",
    "mispricing_wealth",
    "delta_band",
    "scatter",
    "stickiness",
)

LOW_COST_SPLIT = 0.08  # panel A covers C <= this, panel B the rest


class MissingInputError(FileNotFoundError):
    """A required artifact is absent (run `simulate` / `aggregate` first)."""


class SchemaError(ValueError):
    """An artifact exists but does not match the documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    """One rendering task: which figure kind, from which inputs, to where."""

    kind: str
    input_paths: tuple[Path, ...]
    output_path: Path
    info_cost: float | None = None
    image_format: str = "png"

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if self.image_format not in ("png", "svg"):
            raise SchemaError(f"unsupported image format {self.image_format!r}")


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise MissingInputError(f"missing input file: {path}")
    with open(path) as fh:
        return json.load(fh)


def _require(doc: dict, path: Path, keys: list[str], series_keys: list[str]) -> None:
    for key in keys:
        if key not in doc:
            raise SchemaError(f"{path}: missing column {key!r}")
    lengths = {key: len(doc[key]) for key in series_keys}
    if len(set(lengths.values())) > 1:
        raise SchemaError(f"{path}: column lengths disagree: {lengths}")


def _nan(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _cost_tag(cost: float) -> str:
    return f"{cost:g}"


class ArtifactSet:
    """Locates a battery's aggregate files for one directory layout."""

    def __init__(self, manifest_path: str | Path, aggregates_dir: str | Path | None = None):
        self.manifest_path = Path(manifest_path)
        manifest = _load_json(self.manifest_path)
        for key in ("runs", "config"):
            if key not in manifest:
                raise SchemaError(f"{self.manifest_path}: missing column {key!r}")
        self.manifest = manifest
        base = self.manifest_path.parent
        self.agg = Path(aggregates_dir) if aggregates_dir else base / "aggregates"
        self.modes = list(dict.fromkeys(e["mode"] for e in manifest["runs"]))
        self.costs = sorted({float(e["info_cost"]) for e in manifest["runs"]})

    def efficiency(self) -> dict:
        path = self.agg / "efficiency.json"
        doc = _load_json(path)
        for mode in self.modes:
            if mode not in doc:
                raise SchemaError(f"{path}: missing column {mode!r}")
            for tag, cell in doc[mode].items():
                for key in ("mean", "per_run", "n_runs"):
                    if key not in cell:
                        raise SchemaError(f"{path}: missing column {mode}.{tag}.{key}")
        return doc

    def series(self, mode: str, cost: float) -> dict:
        path = self.agg / f"series_{mode}_C{_cost_tag(cost)}.json"
        doc = _load_json(path)
        keys = [
            "t",
            "epsilon_ma",
            "wealth_informed_ma",
            "wealth_uninformed_ma",
            "wealth_total_ma",
        ]
        _require(doc, path, keys + ["window"], keys)
        return doc

    def delta(self, mode: str, cost: float) -> dict:
        path = self.agg / f"delta_{mode}_C{_cost_tag(cost)}.json"
        doc = _load_json(path)
        keys = ["t", "mean", "p10", "p90"]
        _require(doc, path, keys + ["window"], keys)
        return doc

    def stickiness(self, mode: str, cost: float) -> dict:
        path = self.agg / f"stickiness_{mode}_C{_cost_tag(cost)}.json"
        doc = _load_json(path)
        keys = ["t", "mean", "p10", "p90"]
        _require(doc, path, keys + ["window", "threshold"], keys)
        return doc

    def scatter(self, mode: str, cost: float) -> dict:
        path = self.agg / f"scatter_{mode}_C{_cost_tag(cost)}.json"
        doc = _load_json(path)
        keys = [
            "trader_id",
            "informed_rounds",
            "frac_alpha1_informed",
            "uninformed_rounds",
            "frac_alpha1_uninformed",
        ]
        _require(doc, path, keys, keys)
        return doc


def _render_efficiency_bars(arts: ArtifactSet, spec: FigureSpec) -> None:
    eff = arts.efficiency()
    low = [c for c in arts.costs if c <= LOW_COST_SPLIT]
    high = [c for c in arts.costs if c > LOW_COST_SPLIT]
    panels = [p for p in (("A", low), ("B", high)) if p[1]]
    fig, axes = plt.subplots(1, len(panels), figsize=(6 * len(panels), 4))
    if len(panels) == 1:
        axes = [axes]
    width = 0.38
    for ax, (label, costs) in zip(axes, panels):
        x = np.arange(len(costs))
        for k, mode in enumerate(arts.modes):
            means = [eff[mode][_cost_tag(c)]["mean"] for c in costs]
            ax.bar(x + (k - 0.5 * (len(arts.modes) - 1)) * width, means, width, label=mode)
        ax.set_xticks(x, [f"{c:g}" for c in costs])
        ax.set_xlabel("information cost")
        ax.set_ylabel("average mispricing")
        ax.set_title(f"Panel {label}")
        ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output_path, format=spec.image_format)
    plt.close(fig)


def _render_mispricing_wealth(arts: ArtifactSet, spec: FigureSpec) -> None:
    cost = spec.info_cost
    fig, axes = plt.subplots(
        1, len(arts.modes), figsize=(6.5 * len(arts.modes), 4), squeeze=False
    )
    for ax, mode in zip(axes[0], arts.modes):
        doc = arts.series(mode, cost)
        t = np.array(doc["t"])
        ax.plot(t, _nan(doc["epsilon_ma"]), color="grey", lw=1.0, label="mispricing (MA)")
        ax.set_xlabel("period")
        ax.set_ylabel("mispricing")
        ax2 = ax.twinx()
        ax2.plot(t, _nan(doc["wealth_informed_ma"]), "k--", lw=1.0, label="informed wealth")
        ax2.plot(t, _nan(doc["wealth_uninformed_ma"]), "k-.", lw=1.0, label="uninformed wealth")
        ax2.plot(t, _nan(doc["wealth_total_ma"]), "k:", lw=1.0, label="total wealth")
        ax2.set_ylabel("aggregate wealth")
        ax.set_title(f"{mode}, C={cost:g}")
        lines, labels = ax.get_legend_handles_labels()
        lines2, labels2 = ax2.get_legend_handles_labels()
        ax.legend(lines + lines2, labels + labels2, fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output_path, format=spec.image_format)
    plt.close(fig)


def _render_band(doc: dict, ax, ylabel: str) -> None:
    t = np.array(doc["t"])
    mean, p10, p90 = _nan(doc["mean"]), _nan(doc["p10"]), _nan(doc["p90"])
    ax.fill_between(t, p10, p90, alpha=0.3, color="tab:blue", label="10th-90th pct")
    ax.plot(t, mean, color="tab:blue", lw=1.2, label="mean")
    ax.set_xlabel("period")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)


def _render_delta_band(arts: ArtifactSet, spec: FigureSpec) -> None:
    cost = spec.info_cost
    fig, axes = plt.subplots(
        1, len(arts.modes), figsize=(6.5 * len(arts.modes), 4), squeeze=False
    )
    for ax, mode in zip(axes[0], arts.modes):
        _render_band(arts.delta(mode, cost), ax, "price position between alpha bounds")
        ax.axhline(1.0, color="k", lw=0.6, ls=":")
        ax.set_title(f"{mode}, C={cost:g}")
    fig.tight_layout()
    fig.savefig(spec.output_path, format=spec.image_format)
    plt.close(fig)


def _render_stickiness(arts: ArtifactSet, spec: FigureSpec) -> None:
    cost = spec.info_cost
    fig, axes = plt.subplots(
        1, len(arts.modes), figsize=(6.5 * len(arts.modes), 4), squeeze=False
    )
    for ax, mode in zip(axes[0], arts.modes):
        _render_band(arts.stickiness(mode, cost), ax, "traders on a single strategy")
        ax.set_title(f"{mode}, C={cost:g}")
    fig.tight_layout()
    fig.savefig(spec.output_path, format=spec.image_format)
    plt.close(fig)


def _render_scatter(arts: ArtifactSet, spec: FigureSpec) -> None:
    cost = spec.info_cost
    fig, axes = plt.subplots(
        len(arts.modes), 2, figsize=(11, 4 * len(arts.modes)), squeeze=False
    )
    for row, mode in zip(axes, arts.modes):
        doc = arts.scatter(mode, cost)
        for ax, side in zip(row, ("informed", "uninformed")):
            x = np.array(doc[f"{side}_rounds"], dtype=float)
            y = _nan(doc[f"frac_alpha1_{side}"])
            keep = ~np.isnan(y)
            ax.scatter(x[keep], y[keep], s=12, alpha=0.6)
            ax.set_xlabel(f"rounds {side}")
            ax.set_ylabel("share of alpha=1 choices")
            ax.set_ylim(-0.05, 1.05)
            ax.set_title(f"{mode}, C={cost:g}, {side}")
    fig.tight_layout()
    fig.savefig(spec.output_path, format=spec.image_format)
    plt.close(fig)


_RENDERERS = {
    "efficiency_bars": _render_efficiency_bars,
    "mispricing_wealth": _render_mispricing_wealth,
    "delta_band": _render_delta_band,
    "scatter": _render_scatter,
    "stickiness": _render_stickiness,
}


def build_specs(
    arts: ArtifactSet,
    kinds,
    out_dir: str | Path,
    image_format: str = "png",
    costs=None,
) -> list[FigureSpec]:
    out = Path(out_dir)
    wanted = list(kinds)
    for kind in wanted:
        if kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {kind!r}")
    selected_costs = [float(c) for c in (costs if costs is not None else arts.costs)]
    specs = []
    for kind in wanted:
        if kind == "efficiency_bars":
            specs.append(
                FigureSpec(
                    kind,
                    (arts.agg / "efficiency.json",),
                    out / f"fig_efficiency_bars.{image_format}",
                    None,
                    image_format,
                )
            )
            continue
        prefix = {
            "mispricing_wealth": "series",
            "delta_band": "delta",
            "scatter": "scatter",
            "stickiness": "stickiness",
        }[kind]
        for cost in selected_costs:
            inputs = tuple(
                arts.agg / f"{prefix}_{mode}_C{_cost_tag(cost)}.json"
                for mode in arts.modes
            )
            specs.append(
                FigureSpec(
                    kind,
                    inputs,
                    out / f"fig_{kind}_C{_cost_tag(cost)}.{image_format}",
                    cost,
                    image_format,
                )
            )
    return specs


def render_figures(
    manifest_path: str | Path,
    kinds=FIGURE_KINDS,
    out_dir: str | Path = "figures_out",
    image_format: str = "png",
    costs=None,
) -> list[Path]:
    """Render the requested figure kinds for every cost cell in the battery
    (or the ``costs`` subset). Returns the written image paths."""
    arts = ArtifactSet(manifest_path)
    specs = build_specs(arts, kinds, out_dir, image_format, costs)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    written = []
    for spec in specs:
        for path in spec.input_paths:
            if not path.exists():
                raise MissingInputError(f"missing input file: {path}")
        _RENDERERS[spec.kind](arts, spec)
        written.append(spec.output_path)
    return written
