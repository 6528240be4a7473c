"""
Data I/O - deterministic ingestion and emission of on-disk artifacts.

Formats:
  - feature tables / labels : CSV, header row starting with "id", one row per molecule
  - geometries              : concatenated XYZ blocks (comment line = molecule id)
  - SMILES lists            : one per line, optional tab-separated id
  - reports                 : JSON (pydantic) and CSV (one row per record)

Floats are written with 17 significant digits so every double round-trips.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from errors import AlignmentError, ParseError
from models import (
    ATOMIC_NUMBERS,
    FeatureTable,
    GeometrySet,
    LabelVector,
    MoleculeGeometry,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise ParseError("file not found", path=str(path))


def _read_header(path: Path) -> list[str]:
    with path.open(encoding="utf-8", newline="") as fh:
        try:
            return next(csv.reader(fh))
        except StopIteration:
            raise ParseError("empty file", path=str(path))


def _read_body(path: Path, header: list[str]) -> pd.DataFrame:
    """All data rows as strings; ragged rows are reported with their line."""
    try:
        df = pd.read_csv(
            path, header=None, skiprows=1, dtype=str,
            keep_default_na=False, encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=range(len(header)), dtype=str)
    except pd.errors.ParserError as e:
        raise ParseError(f"ragged rows: {e}", path=str(path))

    if df.shape[1] != len(header):
        raise ParseError(
            f"ragged rows: header has {len(header)} fields, data has {df.shape[1]}",
            path=str(path), line=2,
        )
    short = df.isna().any(axis=1).to_numpy()
    if short.any():
        r = int(np.argmax(short))
        raise ParseError(
            f"ragged row: expected {len(header)} fields",
            path=str(path), line=r + 2,
        )
    return df


def _to_float_matrix(df: pd.DataFrame, columns: list[str], path: Path) -> np.ndarray:
    """Strict numeric conversion; the first bad cell is reported by row/column."""
    coerced = df.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(coerced)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ParseError(
            f"non-numeric or non-finite cell {df.iat[r, c]!r}",
            path=str(path), line=int(r) + 2, column=columns[c],
        )
    # Python float() parsing is correctly rounded
    return df.to_numpy(dtype=object).astype(np.float64)


# ──────────────────────────────────────────────────────────────
# Feature tables
# ──────────────────────────────────────────────────────────────

def load_feature_table(path: str | Path, name: str | None = None) -> FeatureTable:
    """CSV (id + d feature columns, N rows) → d×N FeatureTable in file order."""
    path = Path(path)
    _require_file(path)
    header = _read_header(path)
    if not header or header[0].strip() != "id":
        raise ParseError("first header column must be 'id'", path=str(path), line=1)
    features = [h.strip() for h in header[1:]]
    if not features:
        raise ParseError("table has no feature columns", path=str(path), line=1)
    dupes = sorted({f for f in features if features.count(f) > 1})
    if dupes:
        raise ParseError(f"duplicate feature labels {dupes}", path=str(path), line=1)

    df = _read_body(path, header)
    if len(df) == 0:
        raise ParseError("empty table", path=str(path))

    ids = [s.strip() for s in df.iloc[:, 0]]
    seen: dict[str, int] = {}
    for r, mid in enumerate(ids):
        if mid in seen:
            raise ParseError(
                f"duplicate molecule id {mid!r} (first seen on line {seen[mid] + 2})",
                path=str(path), line=r + 2, column="id",
            )
        seen[mid] = r

    values = _to_float_matrix(df.iloc[:, 1:], features, path)
    table = FeatureTable(
        name=name or path.stem,
        features=features,
        data=values.T,
        molecule_ids=ids,
    )
    logger.info(f"Loaded table {table.name}: d={table.n_features}, N={table.n_molecules}")
    return table


def write_feature_table(table: FeatureTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(table.data.T, columns=table.features)
    df.insert(0, "id", table.molecule_ids)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


# ──────────────────────────────────────────────────────────────
# Geometries
# ──────────────────────────────────────────────────────────────

def load_xyz_set(path: str | Path) -> GeometrySet:
    """Concatenated XYZ blocks → GeometrySet (file order)."""
    path = Path(path)
    _require_file(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()

    molecules: list[MoleculeGeometry] = []
    i = 0
    while i < len(lines):
        start = i + 1
        try:
            m = int(lines[i].strip())
        except ValueError:
            raise ParseError(f"expected atom count, got {lines[i]!r}", path=str(path), line=start)
        if m < 0:
            raise ParseError(f"negative atom count {m}", path=str(path), line=start)
        if i + 1 >= len(lines):
            raise ParseError("missing comment line", path=str(path), line=start + 1)
        mol_id = lines[i + 1].strip() or f"mol{len(molecules) + 1}"

        symbols: list[str] = []
        coords: list[tuple[float, float, float]] = []
        for a in range(m):
            ln = i + 2 + a
            if ln >= len(lines):
                raise ParseError(
                    f"block declares {m} atoms but provides {a}",
                    path=str(path), line=ln + 1,
                )
            parts = lines[ln].split()
            if len(parts) < 4:
                raise ParseError(
                    f"block declares {m} atoms but provides {a} (bad atom line {lines[ln]!r})",
                    path=str(path), line=ln + 1,
                )
            sym = parts[0]
            if sym not in ATOMIC_NUMBERS:
                raise ParseError(f"unknown element symbol {sym!r}", path=str(path), line=ln + 1)
            try:
                x, y, z = (float(v) for v in parts[1:4])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {lines[ln]!r}", path=str(path), line=ln + 1)
            symbols.append(sym)
            coords.append((x, y, z))

        try:
            molecules.append(
                MoleculeGeometry(
                    molecule_id=mol_id,
                    symbols=symbols,
                    numbers=[ATOMIC_NUMBERS[s] for s in symbols],
                    positions=np.array(coords, dtype=float).reshape(m, 3),
                )
            )
        except ValidationError as e:
            raise ParseError(str(e.errors()[0]["msg"]), path=str(path), line=start)
        i += 2 + m

    logger.info(f"Loaded {len(molecules)} geometries from {path.name}")
    return GeometrySet(molecules=molecules)


# ──────────────────────────────────────────────────────────────
# SMILES lists
# ──────────────────────────────────────────────────────────────

def load_smiles_file(path: str | Path) -> list[tuple[str, str]]:
    """One SMILES per line with optional tab-separated id → [(id, smiles)]."""
    path = Path(path)
    _require_file(path)
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "\t" in line:
            smi, mol_id = (p.strip() for p in line.split("\t", 1))
        else:
            smi, mol_id = line, f"mol{lineno}"
        if mol_id in seen:
            raise ParseError(f"duplicate molecule id {mol_id!r}", path=str(path), line=lineno)
        seen.add(mol_id)
        entries.append((mol_id, smi))
    return entries


# ──────────────────────────────────────────────────────────────
# Labels
# ──────────────────────────────────────────────────────────────

def available_properties(path: str | Path) -> list[str]:
    path = Path(path)
    _require_file(path)
    return [h.strip() for h in _read_header(path) if h.strip() != "id"]


def load_labels(path: str | Path, property: str, units: str = "") -> LabelVector:
    """Select one property column of a labels CSV, aligned to file order."""
    path = Path(path)
    _require_file(path)
    header = [h.strip() for h in _read_header(path)]
    if "id" not in header:
        raise ParseError("labels file needs an 'id' column", path=str(path), line=1)
    if property not in header:
        available = [h for h in header if h != "id"]
        raise ParseError(f"unknown property {property!r}; available: {', '.join(available)}", path=str(path))

    df = _read_body(path, header)
    if len(df) == 0:
        raise ParseError("empty table", path=str(path))
    col = header.index(property)
    raw = df.iloc[:, col]
    missing = (raw.str.strip() == "").to_numpy()
    if missing.any():
        r = int(np.argmax(missing))
        raise ParseError("missing value", path=str(path), line=r + 2, column=property)
    values = _to_float_matrix(raw.to_frame(), [property], path)[:, 0]
    ids = [s.strip() for s in df.iloc[:, header.index("id")]]
    return LabelVector(property_name=property, units=units, values=values, molecule_ids=ids)


# ──────────────────────────────────────────────────────────────
# Alignment
# ──────────────────────────────────────────────────────────────

def _reorder_ids(reference: list[str], ids: list[str], what: str) -> np.ndarray:
    if set(ids) != set(reference) or len(ids) != len(reference):
        missing = sorted(set(reference) - set(ids))[:5]
        extra = sorted(set(ids) - set(reference))[:5]
        raise AlignmentError(
            f"{what}: molecule ids differ from the first table "
            f"(missing {missing}, unexpected {extra})"
        )
    position = {mid: i for i, mid in enumerate(ids)}
    return np.array([position[mid] for mid in reference], dtype=int)


def align_tables(
    tables: list[FeatureTable],
    labels: LabelVector | None = None,
) -> tuple[list[FeatureTable], LabelVector | None]:
    """Reorder every table (and labels) to the molecule order of the first table."""
    if not tables:
        raise AlignmentError("no tables to align")
    reference = tables[0].molecule_ids
    aligned = [tables[0]]
    for t in tables[1:]:
        aligned.append(t.take(_reorder_ids(reference, t.molecule_ids, f"table {t.name!r}")))
    if labels is not None:
        labels = labels.take(_reorder_ids(reference, labels.molecule_ids, f"labels {labels.property_name!r}"))
    return aligned, labels


# ──────────────────────────────────────────────────────────────
# Reports
# ──────────────────────────────────────────────────────────────

def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, BaseModel):
        text = obj.model_dump_json(indent=2)
    else:
        text = json.dumps(_plain(obj), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _plain(obj):
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def load_json(path: str | Path):
    path = Path(path)
    _require_file(path)
    return json.loads(path.read_text(encoding="utf-8"))


def write_rows_csv(rows: Iterable, path: str | Path) -> Path:
    """One CSV row per record (pydantic model or dict)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [r.model_dump() if isinstance(r, BaseModel) else dict(r) for r in rows]
    pd.DataFrame.from_records(records).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n",
    )
    return path
