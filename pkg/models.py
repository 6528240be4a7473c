"""
Pydantic schemas for the IVA fusion pipeline.

Four groups:
  A. Ingested data (FeatureTable, GeometrySet, LabelVector, MoleculeGraph)
  B. Fitted artifacts (BondVocabulary, Reducer, MultisetTensor, DemixingSet, KrrModel, SyntheticProblem)
  C. Options and configuration (IvaOptions, FusionSpec, CvConfig, BenchConfig, RunConfig)
  D. Reports (CvReport, SweepReport, MixingReport, LearningCurveReport, BenchRow, BenchSummary, Manifest)

Arrays are stored as read-only float64 numpy arrays; every model is frozen,
so loaded and fitted objects can be shared across worker processes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, Optional

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

from config import DEFAULTS


# Built-in element table (symbols accepted in XYZ files and SMILES)
ATOMIC_NUMBERS: dict[str, int] = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
    "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53,
}


def _readonly_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_readonly_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


class _Frozen(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ──────────────────────────────────────────────────────────────
# A. Ingested data
# ──────────────────────────────────────────────────────────────


class FeatureTable(_Frozen):
    """Named d×N matrix; column n holds the feature vector of molecule n."""

    name: str
    features: list[str]
    data: FloatArray
    molecule_ids: list[str]

    @model_validator(mode="after")
    def _check(self) -> "FeatureTable":
        if self.data.ndim != 2:
            raise ValueError(f"table {self.name!r}: data must be 2-D, got {self.data.ndim}-D")
        d, n = self.data.shape
        if d != len(self.features):
            raise ValueError(f"table {self.name!r}: {d} rows but {len(self.features)} feature labels")
        if n != len(self.molecule_ids):
            raise ValueError(f"table {self.name!r}: {n} columns but {len(self.molecule_ids)} molecule ids")
        if len(set(self.features)) != d:
            raise ValueError(f"table {self.name!r}: duplicate feature labels")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"table {self.name!r}: non-finite entries")
        return self

    @property
    def n_features(self) -> int:
        return self.data.shape[0]

    @property
    def n_molecules(self) -> int:
        return self.data.shape[1]

    def take(self, columns) -> "FeatureTable":
        """Column subset (molecule subset) in the given order."""
        columns = np.asarray(columns, dtype=int)
        return FeatureTable(
            name=self.name,
            features=list(self.features),
            data=self.data[:, columns],
            molecule_ids=[self.molecule_ids[i] for i in columns],
        )

    @classmethod
    def from_array(
        cls,
        name: str,
        data,
        features: list[str] | None = None,
        molecule_ids: list[str] | None = None,
    ) -> "FeatureTable":
        data = np.asarray(data, dtype=np.float64)
        d, n = data.shape
        return cls(
            name=name,
            features=features if features is not None else [f"{name}_{i + 1}" for i in range(d)],
            data=data,
            molecule_ids=molecule_ids if molecule_ids is not None else [f"mol{i + 1}" for i in range(n)],
        )


class MoleculeGeometry(_Frozen):
    molecule_id: str
    symbols: list[str]
    numbers: list[int]
    positions: FloatArray  # m×3, Ångström

    @model_validator(mode="after")
    def _check(self) -> "MoleculeGeometry":
        m = len(self.symbols)
        if len(self.numbers) != m or self.positions.shape != (m, 3):
            raise ValueError(f"molecule {self.molecule_id!r}: inconsistent atom count")
        for sym, z in zip(self.symbols, self.numbers):
            if ATOMIC_NUMBERS.get(sym) != z:
                raise ValueError(f"molecule {self.molecule_id!r}: atomic number {z} does not match {sym}")
        if m > 1 and len({tuple(p) for p in self.positions.tolist()}) != m:
            raise ValueError(f"molecule {self.molecule_id!r}: two atoms at identical positions")
        return self

    @property
    def n_atoms(self) -> int:
        return len(self.symbols)


class GeometrySet(_Frozen):
    molecules: list[MoleculeGeometry]

    @property
    def molecule_ids(self) -> list[str]:
        return [m.molecule_id for m in self.molecules]


class LabelVector(_Frozen):
    property_name: str
    units: str = ""
    values: FloatArray
    molecule_ids: list[str]

    @model_validator(mode="after")
    def _check(self) -> "LabelVector":
        if self.values.ndim != 1 or len(self.values) != len(self.molecule_ids):
            raise ValueError(f"labels {self.property_name!r}: length does not match molecule ids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"labels {self.property_name!r}: non-finite values")
        return self

    def take(self, rows) -> "LabelVector":
        rows = np.asarray(rows, dtype=int)
        return LabelVector(
            property_name=self.property_name,
            units=self.units,
            values=self.values[rows],
            molecule_ids=[self.molecule_ids[i] for i in rows],
        )


class GraphAtom(_Frozen):
    element: str
    aromatic: bool = False
    charge: int = 0
    hcount: Optional[int] = None  # None = implicit (organic subset)
    isotope: Optional[int] = None


class Bond(_Frozen):
    i: int
    j: int
    order: float

    @field_validator("order")
    @classmethod
    def _order(cls, v: float) -> float:
        if v not in (1.0, 1.5, 2.0, 3.0):
            raise ValueError(f"bond order {v} not in {{1, 1.5, 2, 3}}")
        return v


class MoleculeGraph(_Frozen):
    molecule_id: str
    atoms: list[GraphAtom]
    bonds: list[Bond]

    @model_validator(mode="after")
    def _check(self) -> "MoleculeGraph":
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for b in self.bonds:
            if not (0 <= b.i < n and 0 <= b.j < n) or b.i == b.j:
                raise ValueError(f"molecule {self.molecule_id!r}: invalid bond endpoints ({b.i}, {b.j})")
            key = (min(b.i, b.j), max(b.i, b.j))
            if key in seen:
                raise ValueError(f"molecule {self.molecule_id!r}: duplicate bond {key}")
            seen.add(key)
            if b.order == 1.5 and not (self.atoms[b.i].aromatic and self.atoms[b.j].aromatic):
                raise ValueError(f"molecule {self.molecule_id!r}: aromatic bond between non-aromatic atoms")
        return self

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def bond_order_sums(self) -> list[float]:
        sums = [0.0] * len(self.atoms)
        for b in self.bonds:
            sums[b.i] += b.order
            sums[b.j] += b.order
        return sums


# ──────────────────────────────────────────────────────────────
# B. Fitted artifacts
# ──────────────────────────────────────────────────────────────


class BondVocabulary(_Frozen):
    keys: list[str]

    @field_validator("keys")
    @classmethod
    def _sorted_unique(cls, v: list[str]) -> list[str]:
        if len(set(v)) != len(v) or v != sorted(v):
            raise ValueError("bond vocabulary keys must be unique and sorted")
        return v

    def __len__(self) -> int:
        return len(self.keys)

    def index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.keys)}


class Reducer(_Frozen):
    """Per-dataset PCA reduction: X̂ = F·(X − mean)."""

    name: str = ""
    features: list[str] = Field(default_factory=list)
    mean: FloatArray          # d
    F: FloatArray             # P×d (scaled by λ^−1/2 when whitened)
    components: FloatArray    # P×d, orthonormal rows
    eigenvalues: FloatArray   # P, descending
    whiten: bool = True

    @model_validator(mode="after")
    def _check(self) -> "Reducer":
        p, d = self.F.shape
        if self.mean.shape != (d,) or self.components.shape != (p, d) or self.eigenvalues.shape != (p,):
            raise ValueError("reducer shapes are inconsistent")
        if np.any(self.eigenvalues <= 0) or np.any(np.diff(self.eigenvalues) > 0):
            raise ValueError("reducer eigenvalues must be positive and descending")
        return self

    @property
    def order(self) -> int:
        return self.F.shape[0]

    @property
    def n_features(self) -> int:
        return self.F.shape[1]


class MultisetTensor(_Frozen):
    """P×N×K stack of reduced datasets."""

    data: FloatArray
    dataset_names: list[str]

    @model_validator(mode="after")
    def _check(self) -> "MultisetTensor":
        if self.data.ndim != 3 or self.data.shape[2] != len(self.dataset_names):
            raise ValueError("multiset tensor must be P×N×K with one name per dataset")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("multiset tensor has non-finite entries")
        return self

    @property
    def P(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def K(self) -> int:
        return self.data.shape[2]

    def slice(self, k: int) -> np.ndarray:
        return self.data[:, :, k]


class DemixingSet(_Frozen):
    W: FloatArray  # K×P×P
    iterations: int
    final_cost: float
    cost_trace: list[float]
    converged: bool
    seed: int
    dataset_names: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "DemixingSet":
        if self.W.ndim != 3 or self.W.shape[1] != self.W.shape[2]:
            raise ValueError("W must be K×P×P")
        for k, w in enumerate(self.W):
            sign, _ = np.linalg.slogdet(w)
            if sign == 0:
                raise ValueError(f"W[{k}] is singular")
        if any(b > a for a, b in zip(self.cost_trace, self.cost_trace[1:])):
            raise ValueError("cost trace must be non-increasing over accepted steps")
        return self

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def P(self) -> int:
        return self.W.shape[1]


class KrrModel(_Frozen):
    support: FloatArray        # d×M
    dual_weights: FloatArray   # M
    sigma: float = Field(..., gt=0)
    lambda_: float = Field(..., ge=0)
    train_mean_label: float


class SyntheticProblem(_Frozen):
    """Noiseless multiset mixture: X^[k] = A^[k]·S^[k]."""

    K: int
    P: int
    N: int
    rho: float
    A: FloatArray  # K×P×P
    S: FloatArray  # P×N×K
    X: FloatArray  # P×N×K
    seed: int

    @model_validator(mode="after")
    def _check(self) -> "SyntheticProblem":
        if self.A.shape != (self.K, self.P, self.P):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.K, self.P, self.P)}")
        if self.S.shape != (self.P, self.N, self.K) or self.X.shape != self.S.shape:
            raise ValueError("S and X must be P×N×K")
        return self


# ──────────────────────────────────────────────────────────────
# C. Options and configuration
# ──────────────────────────────────────────────────────────────


class IvaOptions(_Frozen):
    step_size: float = Field(default=DEFAULTS.iva_step_size, gt=0)
    max_iters: int = Field(default=DEFAULTS.iva_max_iters, ge=1)
    tol: float = Field(default=DEFAULTS.iva_tol, gt=0)
    seed: int = Field(default=0, ge=0)
    init: Literal["identity", "perturbation"] = "identity"
    restarts: int = Field(default=DEFAULTS.iva_restarts, ge=1)


FusionMode = Literal["regular", "single", "ica", "iva"]


class FusionSpec(_Frozen):
    """How K feature tables become one feature table."""

    mode: FusionMode = "iva"
    single_name: Optional[str] = None
    components: int = Field(default=DEFAULTS.default_components, ge=1)
    whiten: bool = DEFAULTS.whiten
    iva: IvaOptions = Field(default_factory=IvaOptions)

    @model_validator(mode="before")
    @classmethod
    def _split_single(cls, data):
        if isinstance(data, dict) and isinstance(data.get("mode"), str) and data["mode"].startswith("single:"):
            data = dict(data)
            data["single_name"] = data["mode"].split(":", 1)[1]
            data["mode"] = "single"
        return data

    @model_validator(mode="after")
    def _check(self) -> "FusionSpec":
        if self.mode == "single" and not self.single_name:
            raise ValueError("mode 'single' needs a dataset name, e.g. single:SOB")
        return self

    def mode_string(self) -> str:
        return f"single:{self.single_name}" if self.mode == "single" else self.mode

    def with_mode(self, mode: str) -> "FusionSpec":
        return FusionSpec.model_validate({**self.model_dump(), "mode": mode, "single_name": None})


class CvConfig(_Frozen):
    outer_folds: int = Field(default=DEFAULTS.outer_folds, ge=1)
    repeats: int = Field(default=DEFAULTS.repeats, ge=1)
    train_fraction: float = Field(default=DEFAULTS.train_fraction, gt=0, lt=1)
    validation_fraction: float = Field(default=DEFAULTS.validation_fraction, gt=0, lt=1)
    test_fraction: float = Field(default=DEFAULTS.test_fraction, gt=0, lt=1)
    sigma_grid: list[float] = Field(default_factory=DEFAULTS.sigma_multipliers)  # × median distance
    lambda_grid: list[float] = Field(default_factory=DEFAULTS.lambda_grid)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "CvConfig":
        total = self.train_fraction + self.validation_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")
        if not self.sigma_grid or not self.lambda_grid:
            raise ValueError("hyperparameter grids must be non-empty")
        if any(s <= 0 for s in self.sigma_grid) or any(lam <= 0 for lam in self.lambda_grid):
            raise ValueError("grid values must be positive")
        return self


class BenchConfig(_Frozen):
    K: int = Field(default=3, ge=1)
    P: int = Field(default=5, ge=1)
    N: int = Field(default=5000, ge=1)
    rho: float = Field(default=0.5, ge=0, lt=1)
    cond_bound: float = Field(default=DEFAULTS.bench_cond_bound, gt=1)
    seeds: int = Field(default=50, ge=1)
    modes: list[Literal["iva", "ica"]] = Field(default_factory=lambda: ["iva", "ica"])
    seed: int = Field(default=0, ge=0)
    iva: IvaOptions = Field(default_factory=IvaOptions)


class RunConfig(_Frozen):
    inputs: dict[str, Path] = Field(default_factory=dict)
    smiles: Optional[Path] = None
    xyz: Optional[Path] = None
    featurizations: list[Literal["SOB", "WE", "CME"]] = Field(default_factory=list)
    dmax: Optional[int] = Field(default=None, ge=1)
    labels_path: Optional[Path] = None
    property: str = ""
    units: str = ""
    fusion: FusionSpec = Field(default_factory=FusionSpec)
    cv: CvConfig = Field(default_factory=CvConfig)
    curve_sizes: list[int] = Field(default_factory=list)
    curve_modes: list[str] = Field(default_factory=list)
    sweep_k: list[int] = Field(default_factory=list)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    out_dir: Path = Path("runs/latest")
    seed: int = Field(default=0, ge=0)
    jobs: int = Field(default=1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _propagate_seed(cls, data):
        """Section seeds default to the global seed."""
        if not isinstance(data, dict):
            return data
        data = dict(data)
        seed = data.get("seed", 0)
        cv = dict(data.get("cv") or {})
        cv.setdefault("seed", seed)
        data["cv"] = cv
        fusion = dict(data.get("fusion") or {})
        iva = dict(fusion.get("iva") or {})
        iva.setdefault("seed", seed)
        fusion["iva"] = iva
        data["fusion"] = fusion
        bench = dict(data.get("bench") or {})
        bench.setdefault("seed", seed)
        bench.setdefault("iva", iva)
        data["bench"] = bench
        return data

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        for name, path in self.inputs.items():
            if not path.exists():
                raise ValueError(f"input table {name!r} not found: {path}")
        for path in (self.smiles, self.xyz, self.labels_path):
            if path is not None and not path.exists():
                raise ValueError(f"file not found: {path}")
        if "CME" in self.featurizations and self.xyz is None:
            raise ValueError("featurization CME needs an xyz file")
        if {"SOB", "WE"} & set(self.featurizations) and self.smiles is None:
            raise ValueError("featurizations SOB/WE need a smiles file")
        return self

    def dataset_names(self) -> list[str]:
        return list(self.inputs) + [f for f in self.featurizations if f not in self.inputs]


# ──────────────────────────────────────────────────────────────
# D. Reports
# ──────────────────────────────────────────────────────────────


class CvCell(_Frozen):
    repeat: int
    fold: int
    mae: float
    sigma: float
    lambda_: float
    n_train: int
    n_validation: int
    n_test: int


class CvReport(_Frozen):
    property_name: str
    feature_set: str
    n_used: int
    feature_dimension: int
    refit_on: str = "train+validation"
    cells: list[CvCell]
    mean_mae: float
    std_mae: float
    median_mae: float
    q1_mae: float
    q3_mae: float
    repeat_mean_mae: float

    @classmethod
    def from_cells(
        cls,
        cells: list[CvCell],
        property_name: str,
        feature_set: str,
        n_used: int,
        feature_dimension: int,
    ) -> "CvReport":
        cells = sorted(cells, key=lambda c: (c.repeat, c.fold))
        maes = np.array([c.mae for c in cells])
        repeats = sorted({c.repeat for c in cells})
        repeat_means = [float(np.mean([c.mae for c in cells if c.repeat == r])) for r in repeats]
        q1, median, q3 = np.percentile(maes, [25, 50, 75])
        return cls(
            property_name=property_name,
            feature_set=feature_set,
            n_used=n_used,
            feature_dimension=feature_dimension,
            cells=cells,
            mean_mae=float(np.mean(maes)),
            std_mae=float(np.std(maes, ddof=1)) if len(maes) > 1 else 0.0,
            median_mae=float(median),
            q1_mae=float(q1),
            q3_mae=float(q3),
            repeat_mean_mae=float(np.mean(repeat_means)),
        )


class QuartileSummary(_Frozen):
    median: float
    q1: float
    q3: float

    @classmethod
    def of(cls, values) -> "QuartileSummary":
        q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
        return cls(median=float(med), q1=float(q1), q3=float(q3))


class SweepCombination(_Frozen):
    members: list[str]
    regular_mean_mae: float
    regular_median_mae: float
    iva_mean_mae: float
    iva_median_mae: float
    regular_dimension: int
    iva_dimension: int


class SweepReport(_Frozen):
    k: int
    n_tables: int
    combinations: list[SweepCombination]
    summary: dict[str, QuartileSummary]

    @model_validator(mode="after")
    def _check(self) -> "SweepReport":
        if len(self.combinations) != math.comb(self.n_tables, self.k):
            raise ValueError("combination count must equal C(n, k)")
        return self


class MixingWeight(_Frozen):
    feature: str
    weight: float


class MixingSource(_Frozen):
    dataset: str
    source: int
    weights: list[MixingWeight]  # sorted by |weight| descending


class MixingReport(_Frozen):
    sources: list[MixingSource]

    def top(self, dataset: str, source: int, n: int = 5) -> list[MixingWeight]:
        for s in self.sources:
            if s.dataset == dataset and s.source == source:
                return s.weights[:n]
        raise KeyError(f"no source {source} for dataset {dataset!r}")


class LearningCurvePoint(_Frozen):
    mode: str
    n: int
    mae: float


class LearningCurveFit(_Frozen):
    mode: str
    C: float
    alpha: float


class LearningCurveReport(_Frozen):
    points: list[LearningCurvePoint]
    fits: list[LearningCurveFit]


class BenchRow(_Frozen):
    trial: int
    seed: int
    mode: str
    jisi: float
    mean_amari: float
    iterations: int
    converged: bool
    final_cost: float


class Manifest(_Frozen):
    command: str
    config_hash: str
    seed: int
    mode: str = ""
    property: str = ""
    n_used: int = 0
    feature_dimension: int = 0
    dataset_dimensions: dict[str, int] = Field(default_factory=dict)
    versions: dict[str, str] = Field(default_factory=dict)
    config: dict = Field(default_factory=dict)


class BenchModeSummary(_Frozen):
    trials: int
    median_jisi: float
    mean_jisi: float
    mean_amari: float
    converged_fraction: float


class PairedComparison(_Frozen):
    """ICA-mode minus IVA score, paired over trials."""

    n: int
    mean_difference: float
    ci_low: float
    ci_high: float
    p_value: float
    alternative: Literal["greater", "two-sided"] = "greater"


class BenchSummary(_Frozen):
    modes: dict[str, BenchModeSummary]
    paired: Optional[PairedComparison] = None  # jISI, one-sided
    paired_amari: Optional[PairedComparison] = None  # per-dataset Amari, two-sided
