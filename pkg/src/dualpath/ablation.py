"""Ablation grids: train one run per cell under an identical seed/schedule
and tabulate test accuracy plus per-class accuracy for every cell.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .contrastive import ContrastiveWeights
from .train import RunConfig, TrainResult, train

__all__ = ["AXES", "AblationCell", "AblationResult", "axis_cells", "ablate"]

AXES = ("variant", "contrastive", "scene", "ratio")

_VARIANT_CELLS = ("ss", "tt", "st", "ts", "dual")
_CONTRASTIVE_CELLS = ("none", "ff", "fv", "vv", "all")
_SCENE_CELLS = ("none", "early", "middle", "late")
_RATIO_CELLS = (0.05, 0.10, 0.25, 0.50, 1.00)

_WEIGHT_SETS = {
    "none": ContrastiveWeights(0.0, 0.0, 0.0),
    "ff": ContrastiveWeights(1.0, 0.0, 0.0),
    "fv": ContrastiveWeights(0.0, 1.0, 0.0),
    "vv": ContrastiveWeights(0.0, 0.0, 1.0),
    "all": ContrastiveWeights(1.0, 1.0, 1.0),
}


@dataclass
class AblationCell:
    axis: str
    label: str
    config: RunConfig
    result: TrainResult | None = None

    @property
    def test_accuracy(self) -> float:
        return self.result.final_test.group_accuracy

    @property
    def per_class(self) -> list[float]:
        return self.result.final_test.per_class_accuracy


@dataclass
class AblationResult:
    cells: list[AblationCell]

    def format_table(self) -> str:
        lines = [f"{'axis':<12} {'cell':<8} {'group acc':>10} {'indiv acc':>10} {'mpca':>8}"]
        for c in self.cells:
            rec = c.result.final_test
            lines.append(f"{c.axis:<12} {c.label:<8} {rec.group_accuracy:>10.4f} "
                         f"{rec.individual_accuracy:>10.4f} {rec.mpca:>8.4f}")
        return "\n".join(lines)

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation_table.txt").write_text(self.format_table() + "\n")
        with open(out_dir / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            n_classes = len(self.cells[0].per_class)
            writer.writerow(["axis", "cell", "group_accuracy", "individual_accuracy", "mpca"]
                            + [f"class_{i}" for i in range(n_classes)])
            for c in self.cells:
                rec = c.result.final_test
                writer.writerow([c.axis, c.label, rec.group_accuracy,
                                 rec.individual_accuracy, rec.mpca] + c.per_class)
        with open(out_dir / "ablation.jsonl", "w") as fh:
            for c in self.cells:
                fh.write(json.dumps({"axis": c.axis, "cell": c.label,
                                     "group_accuracy": c.test_accuracy,
                                     "per_class_accuracy": c.per_class},
                                    sort_keys=True) + "\n")


def axis_cells(axis: str, base: RunConfig, out_root: Path) -> list[AblationCell]:
    """Configs for one axis, mirroring the reference ablation layouts.

    The variant axis disables the contrastive terms and scene fusion so cells
    differ only in path ordering; the contrastive axis runs on the dual
    variant without scene fusion; the scene axis keeps the full contrastive
    loss; the ratio axis subsamples the training split of the base config.
    """
    cells = []
    if axis == "variant":
        for v in _VARIANT_CELLS:
            cfg = replace(base, model=replace(base.model, variant=v, scene_fusion="none"),
                          weights=_WEIGHT_SETS["none"],
                          out_dir=str(out_root / f"variant_{v}"))
            cells.append(AblationCell(axis="variant", label=v, config=cfg))
    elif axis == "contrastive":
        for name in _CONTRASTIVE_CELLS:
            cfg = replace(base, model=replace(base.model, variant="dual", scene_fusion="none"),
                          weights=_WEIGHT_SETS[name],
                          out_dir=str(out_root / f"contrastive_{name}"))
            cells.append(AblationCell(axis="contrastive", label=name, config=cfg))
    elif axis == "scene":
        for mode in _SCENE_CELLS:
            cfg = replace(base, model=replace(base.model, variant="dual", scene_fusion=mode),
                          weights=_WEIGHT_SETS["all"],
                          out_dir=str(out_root / f"scene_{mode}"))
            cells.append(AblationCell(axis="scene", label=mode, config=cfg))
    elif axis == "ratio":
        for r in _RATIO_CELLS:
            cfg = replace(base, data_ratio=r,
                          out_dir=str(out_root / f"ratio_{int(r * 100)}"))
            cells.append(AblationCell(axis="ratio", label=f"{int(r * 100)}%", config=cfg))
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; valid: {AXES}")
    return cells


def ablate(base: RunConfig, axes: list[str], out_dir, quiet: bool = False) -> AblationResult:
    """Train every cell of every requested axis and write the comparison."""
    out_root = Path(out_dir)
    cells: list[AblationCell] = []
    for axis in axes:
        cells.extend(axis_cells(axis, base, out_root))
    for cell in cells:
        if not quiet:
            print(f"[ablate] {cell.axis}/{cell.label}")
        cell.result = train(cell.config, quiet=True)
    result = AblationResult(cells=cells)
    result.write(out_root)
    if not quiet:
        print(result.format_table())
    return result
