"""
Fusion strategies - turn K aligned feature tables into one feature matrix.

  regular  : stack raw feature rows (Σ d_k dimensions)
  single   : one named table unchanged
  ica      : per-dataset PCA + per-dataset IVA-L with K=1 (P·K dimensions)
  iva      : per-dataset PCA + joint IVA-L, SCV-major concatenation (P·K dimensions)

``fit_fusion`` sees training columns only; ``FittedFusion.transform`` then maps
any column block (validation, test) with the frozen reducers and demixing matrices.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

import dataio
from config import DEFAULTS, FusionConfig
from errors import ConfigError, ShapeError
from iva_core import ica_mode, iva_l
from models import DemixingSet, FeatureTable, FusionSpec, Reducer
from multiset import apply_reducer, fit_reducer, scv_labels, scv_stack, stack_tensor

logger = logging.getLogger(__name__)

REDUCERS_FILE = "reducers.json"
DEMIXING_FILE = "demixing.json"


class FittedFusion(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    spec: FusionSpec
    dataset_names: list[str]
    features: list[str]
    reducers: list[Reducer] = []
    demixing: Optional[DemixingSet] = None

    @property
    def dimension(self) -> int:
        return len(self.features)

    def transform(self, blocks: list[np.ndarray]) -> np.ndarray:
        """K raw blocks (d_k × n, same column order) → fused (D × n)."""
        if len(blocks) != len(self.dataset_names):
            raise ShapeError(f"expected {len(self.dataset_names)} blocks, got {len(blocks)}")
        mode = self.spec.mode
        if mode == "regular":
            return np.vstack(blocks)
        if mode == "single":
            return np.asarray(blocks[self.dataset_names.index(self.spec.single_name)])
        Y = [
            self.demixing.W[k] @ apply_reducer(r, block)
            for k, (r, block) in enumerate(zip(self.reducers, blocks))
        ]
        return scv_stack(Y)

    def transform_tables(self, tables: list[FeatureTable]) -> FeatureTable:
        return FeatureTable(
            name=self.spec.mode_string(),
            features=list(self.features),
            data=self.transform([t.data for t in tables]),
            molecule_ids=list(tables[0].molecule_ids),
        )


def fusion_dimension(spec: FusionSpec, tables: list[FeatureTable]) -> int:
    if spec.mode == "regular":
        return sum(t.n_features for t in tables)
    if spec.mode == "single":
        return next(t.n_features for t in tables if t.name == spec.single_name)
    return spec.components * len(tables)


def fit_fusion(
    tables: list[FeatureTable],
    spec: FusionSpec,
    cfg: FusionConfig | None = None,
) -> FittedFusion:
    cfg = cfg or DEFAULTS
    names = [t.name for t in tables]

    if spec.mode == "regular":
        features = list(tables[0].features) if len(tables) == 1 else [
            f"{t.name}:{f}" for t in tables for f in t.features
        ]
        return FittedFusion(spec=spec, dataset_names=names, features=features)

    if spec.mode == "single":
        if spec.single_name not in names:
            raise ConfigError(f"mode single:{spec.single_name} but datasets are {names}")
        table = tables[names.index(spec.single_name)]
        return FittedFusion(spec=spec, dataset_names=names, features=list(table.features))

    reducers = [fit_reducer(t, spec.components, spec.whiten, cfg) for t in tables]
    T = stack_tensor([apply_reducer(r, t) for r, t in zip(reducers, tables)], names)
    solver = iva_l if spec.mode == "iva" else ica_mode
    demixing = solver(T, spec.iva, cfg)
    return FittedFusion(
        spec=spec,
        dataset_names=names,
        features=scv_labels(spec.components, names),
        reducers=reducers,
        demixing=demixing,
    )


# ──────────────────────────────────────────────────────────────
# Persistence
# ──────────────────────────────────────────────────────────────

def save_fusion(fitted: FittedFusion, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    if fitted.reducers:
        written.append(dataio.write_json({"reducers": fitted.reducers}, out_dir / REDUCERS_FILE))
    if fitted.demixing is not None:
        written.append(dataio.write_json(fitted.demixing, out_dir / DEMIXING_FILE))
    return written


def load_fusion_artifacts(out_dir: str | Path) -> tuple[list[Reducer], DemixingSet]:
    out_dir = Path(out_dir)
    reducers = [Reducer.model_validate(r) for r in dataio.load_json(out_dir / REDUCERS_FILE)["reducers"]]
    demixing = DemixingSet.model_validate(dataio.load_json(out_dir / DEMIXING_FILE))
    return reducers, demixing
