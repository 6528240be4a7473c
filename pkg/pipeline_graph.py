"""
LangGraph pipeline for a fusion + regression run.

6 nodes:
  1. load_inputs   - feature tables, SMILES / XYZ sources, labels
  2. featurize     - SOB / WE / CME tables from the parsed molecules
  3. align         - reorder every table and the labels to one molecule order
  4. cross_validate - nested CV with the fusion fitted inside each fold
  5. fit_final     - reducers + demixing fitted on all aligned data (ica / iva / fuse)
  6. persist       - reports, artifacts and manifest to the output directory

Graph wiring:
  START → load_inputs → featurize → align
  align → [command == fuse? yes → fit_final → persist]
  align → [no → cross_validate → (ica/iva? fit_final) → persist] → END
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, TypedDict

from langgraph.graph import END, StateGraph
from pydantic import ValidationError

import dataio
from config import DEFAULTS
from errors import ConfigError, FusionError, StageError
from featurize import coulomb_spectra_table, sob_table, weight_spectra_table
from fusion import FittedFusion, fit_fusion, save_fusion
from models import CvReport, FeatureTable, LabelVector, Manifest, RunConfig
from regress import nested_cv
from smiles_parser import parse_smiles_list

logger = logging.getLogger(__name__)

REPORT_FILE = "cv_report.json"
CELLS_FILE = "cv_cells.csv"
MANIFEST_FILE = "manifest.json"
FUSED_FILE = "fused.csv"

_VERSIONED = ("numpy", "scipy", "pandas", "pydantic", "langgraph")


# ──────────────────────────────────────────────────────────────
# Pipeline State
# ──────────────────────────────────────────────────────────────

class PipelineState(TypedDict, total=False):
    # Inputs
    config: RunConfig
    command: str            # train | fuse | curve | sweep | compare

    # Node outputs (accumulated)
    tables: list            # list[FeatureTable]
    graphs: list            # list[MoleculeGraph]
    geometries: Any         # GeometrySet | None
    labels: Any             # LabelVector | None
    report: Any             # CvReport
    fitted: Any             # FittedFusion
    written: list           # list[str]


def _stage(name: str):
    """Re-raise anything a node throws as StageError tagged with the node name."""

    def wrap(fn):
        @functools.wraps(fn)
        def node(state: PipelineState) -> dict:
            try:
                return fn(state)
            except StageError:
                raise
            except (FusionError, ValidationError, OSError) as e:
                raise StageError(name, e) from e

        return node

    return wrap


# ──────────────────────────────────────────────────────────────
# Node 1 - load_inputs
# ──────────────────────────────────────────────────────────────

@_stage("load_inputs")
def load_inputs_node(state: PipelineState) -> dict:
    cfg = state["config"]
    tables = [dataio.load_feature_table(path, name) for name, path in cfg.inputs.items()]

    graphs = []
    if cfg.smiles is not None and {"SOB", "WE"} & set(cfg.featurizations):
        graphs = parse_smiles_list(dataio.load_smiles_file(cfg.smiles))
        logger.info(f"Parsed {len(graphs)} SMILES from {cfg.smiles}")
    geometries = None
    if cfg.xyz is not None and "CME" in cfg.featurizations:
        geometries = dataio.load_xyz_set(cfg.xyz)
        logger.info(f"Loaded {len(geometries.molecules)} geometries from {cfg.xyz}")

    labels = None
    if cfg.labels_path is not None:
        labels = dataio.load_labels(cfg.labels_path, cfg.property, cfg.units)
    elif state.get("command", "train") != "fuse":
        raise ConfigError("a labels file and property are required for regression")

    return {"tables": tables, "graphs": graphs, "geometries": geometries, "labels": labels}


# ──────────────────────────────────────────────────────────────
# Node 2 - featurize
# ──────────────────────────────────────────────────────────────

def build_feature_tables(cfg: RunConfig, graphs: list, geometries) -> list[FeatureTable]:
    built = []
    for name in cfg.featurizations:
        if name in cfg.inputs:
            continue  # a supplied table wins over recomputation
        if name == "SOB":
            built.append(sob_table(graphs))
        elif name == "WE":
            built.append(weight_spectra_table(graphs, cfg.dmax))
        elif name == "CME":
            built.append(coulomb_spectra_table(geometries, cfg.dmax))
        logger.info(f"Featurized {name}: {built[-1].n_features} features × {built[-1].n_molecules} molecules")
    return built


@_stage("featurize")
def featurize_node(state: PipelineState) -> dict:
    cfg = state["config"]
    tables = list(state["tables"]) + build_feature_tables(cfg, state.get("graphs", []), state.get("geometries"))
    if not tables:
        raise ConfigError("no feature tables: give [inputs] or [featurize] featurizations")
    return {"tables": tables}


# ──────────────────────────────────────────────────────────────
# Node 3 - align
# ──────────────────────────────────────────────────────────────

@_stage("align")
def align_node(state: PipelineState) -> dict:
    tables, labels = dataio.align_tables(state["tables"], state.get("labels"))
    logger.info(f"Aligned {len(tables)} tables on {tables[0].n_molecules} molecules")
    return {"tables": tables, "labels": labels}


# ──────────────────────────────────────────────────────────────
# Node 4 - cross_validate
# ──────────────────────────────────────────────────────────────

@_stage("cross_validate")
def cross_validate_node(state: PipelineState) -> dict:
    cfg = state["config"]
    report = nested_cv(state["tables"], state["labels"], cfg.cv, cfg.fusion, jobs=cfg.jobs)
    return {"report": report}


# ──────────────────────────────────────────────────────────────
# Node 5 - fit_final
# ──────────────────────────────────────────────────────────────

@_stage("fit_final")
def fit_final_node(state: PipelineState) -> dict:
    fitted = fit_fusion(state["tables"], state["config"].fusion)
    logger.info(f"Final fusion fitted on all {state['tables'][0].n_molecules} molecules (D={fitted.dimension})")
    return {"fitted": fitted}


# ──────────────────────────────────────────────────────────────
# Node 6 - persist
# ──────────────────────────────────────────────────────────────

def config_hash(cfg: RunConfig) -> str:
    payload = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def library_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _VERSIONED:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(
    cfg: RunConfig,
    command: str,
    out_dir: Path,
    tables: list[FeatureTable] | None = None,
    report: CvReport | None = None,
    feature_dimension: int = 0,
) -> Path:
    manifest = Manifest(
        command=command,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        mode=cfg.fusion.mode_string(),
        property=cfg.property,
        n_used=report.n_used if report else (tables[0].n_molecules if tables else 0),
        feature_dimension=report.feature_dimension if report else feature_dimension,
        dataset_dimensions={t.name: t.n_features for t in tables or []},
        versions=library_versions(),
        config={"run": cfg.model_dump(mode="json"), "constants": DEFAULTS.to_dict()},
    )
    return dataio.write_json(manifest, out_dir / MANIFEST_FILE)


@_stage("persist")
def persist_node(state: PipelineState) -> dict:
    cfg = state["config"]
    out_dir = Path(cfg.out_dir)
    written: list[Path] = []
    report: CvReport | None = state.get("report")
    fitted: FittedFusion | None = state.get("fitted")

    if report is not None:
        written.append(dataio.write_json(report, out_dir / REPORT_FILE))
        written.append(dataio.write_rows_csv(report.cells, out_dir / CELLS_FILE))
    if fitted is not None:
        written.extend(save_fusion(fitted, out_dir))
        if state.get("command") == "fuse":
            written.append(dataio.write_feature_table(fitted.transform_tables(state["tables"]), out_dir / FUSED_FILE))

    dimension = fitted.dimension if fitted is not None else 0
    written.append(write_manifest(cfg, state.get("command", "train"), out_dir, state["tables"], report, dimension))
    logger.info(f"Wrote {len(written)} files to {out_dir}")
    return {"written": [str(p) for p in written]}


# ──────────────────────────────────────────────────────────────
# Conditional edges
# ──────────────────────────────────────────────────────────────

def route_after_align(state: PipelineState) -> str:
    return "fit_final" if state.get("command") == "fuse" else "cross_validate"


def route_after_cv(state: PipelineState) -> str:
    return "fit_final" if state["config"].fusion.mode in ("ica", "iva") else "persist"


# ──────────────────────────────────────────────────────────────
# Build the graph
# ──────────────────────────────────────────────────────────────

def build_graph():
    """Construct and compile the LangGraph StateGraph."""
    graph = StateGraph(PipelineState)

    graph.add_node("load_inputs", load_inputs_node)
    graph.add_node("featurize", featurize_node)
    graph.add_node("align", align_node)
    graph.add_node("cross_validate", cross_validate_node)
    graph.add_node("fit_final", fit_final_node)
    graph.add_node("persist", persist_node)

    graph.set_entry_point("load_inputs")
    graph.add_edge("load_inputs", "featurize")
    graph.add_edge("featurize", "align")
    graph.add_conditional_edges(
        "align",
        route_after_align,
        {"fit_final": "fit_final", "cross_validate": "cross_validate"},
    )
    graph.add_conditional_edges(
        "cross_validate",
        route_after_cv,
        {"fit_final": "fit_final", "persist": "persist"},
    )
    graph.add_edge("fit_final", "persist")
    graph.add_edge("persist", END)

    return graph.compile()


# ── Module-level compiled graph ───────────────────────────────

fusion_graph = build_graph()


def run_pipeline(cfg: RunConfig, command: str = "train") -> PipelineState:
    """Run the graph; the returned state carries ``report``, ``fitted`` and ``written``."""
    logger.info(f"Pipeline [{command}] mode={cfg.fusion.mode_string()} → {cfg.out_dir}")
    return fusion_graph.invoke({"config": cfg, "command": command})


def prepare_data(cfg: RunConfig, require_labels: bool = True) -> tuple[list[FeatureTable], LabelVector | None]:
    """Stages 1–3 only; used by experiments that call nested_cv repeatedly."""
    state: PipelineState = {"config": cfg, "command": "train" if require_labels else "fuse"}
    state.update(load_inputs_node(state))
    state.update(featurize_node(state))
    state.update(align_node(state))
    return state["tables"], state.get("labels")
