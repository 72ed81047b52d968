"""Threshold and label-scheme sweeps: rebuild labels, pretrain, probe."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from itertools import combinations

from ..contrastive.loss import LABEL_FIELDS
from ..contrastive.pretrain import PretrainConfig, pretrain
from ..patchgen import PatchManifest, relabel
from .probe import ProbePatches, ProbeResult, probe_encoder

FULL_SCHEME = LABEL_FIELDS
ALL_SCHEMES = tuple(
    combo for r in (3, 2, 1) for combo in combinations(LABEL_FIELDS, r)
)


@dataclass
class AblationGrid:
    rows: list[tuple[str, int, ProbeResult]] = field(default_factory=list)

    def add(self, config: str, seed: int, result: ProbeResult):
        if any(c == config and s == seed and r.target == result.target for c, s, r in self.rows):
            raise ValueError(f"duplicate grid cell {config!r} seed {seed} {result.target}")
        self.rows.append((config, seed, result))

    def values(self, config: str, target: str) -> list[float]:
        return [r.value for c, _, r in self.rows if c == config and r.target == target]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "metric_name", "value", "n_eval", "seed"])
        for config, seed, r in self.rows:
            w.writerow([config, f"{r.target}_{r.metric}", f"{r.value:.10g}", r.n_eval, seed])
        return buf.getvalue()


def scheme_name(scheme) -> str:
    return "+".join(f for f in LABEL_FIELDS if f in scheme)


def _cell(grid, name, records, config, probe, eval_mask, seed):
    result = pretrain(records, replace(config, seed=seed))
    for r in probe_encoder(result.net, probe, eval_mask).values():
        grid.add(name, seed, r)


def ablate_thresholds(manifest: PatchManifest, t_values, config: PretrainConfig,
                      probe: ProbePatches, eval_mask, seeds=(0,)) -> AblationGrid:
    grid = AblationGrid()
    for t in t_values:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"threshold {t} outside [0, 1]")
        records = relabel(manifest, t).records
        for seed in seeds:
            _cell(grid, f"t={t:g}", records, config, probe, eval_mask, seed)
    return grid


def ablate_label_schemes(manifest: PatchManifest, schemes, config: PretrainConfig,
                         probe: ProbePatches, eval_mask, seeds=(0,)) -> AblationGrid:
    grid = AblationGrid()
    for scheme in schemes:
        if not scheme:
            raise ValueError("label scheme must be non-empty")
        cfg = replace(config, loss=replace(config.loss, label_set=tuple(scheme)))
        for seed in seeds:
            _cell(grid, scheme_name(scheme), manifest.records, cfg, probe, eval_mask, seed)
    return grid
