"""
Molecular featurizations.

  1. SOB - sum over bonds: per-bond-type counts over a dataset-wide vocabulary
  2. WE  - eigenspectrum of the bond-order weight matrix (hydrogens are vertices)
  3. CME - eigenspectrum of the Coulomb matrix (atomic units)

Spectra are sorted in descending order and zero-padded to ``dmax``, the atom
count of the largest molecule in the dataset unless given explicitly.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from config import DEFAULTS, FusionConfig
from errors import NumericalError, ShapeError, VocabularyError
from models import BondVocabulary, FeatureTable, GeometrySet, MoleculeGeometry, MoleculeGraph

logger = logging.getLogger(__name__)

BOND_SYMBOLS = {1.0: "-", 1.5: ":", 2.0: "=", 3.0: "#"}


# ──────────────────────────────────────────────────────────────
# 1. Sum over bonds
# ──────────────────────────────────────────────────────────────

def bond_key(elem_a: str, elem_b: str, order: float) -> str:
    """'<A><sym><B>': heavy elements alphabetical, hydrogen last (C-H, C#N, O-H)."""
    a, b = sorted((elem_a, elem_b), key=lambda e: (e == "H", e))
    return f"{a}{BOND_SYMBOLS[order]}{b}"


def _graph_bond_keys(g: MoleculeGraph) -> list[str]:
    return [bond_key(g.atoms[bd.i].element, g.atoms[bd.j].element, bd.order) for bd in g.bonds]


def build_bond_vocabulary(graphs: list[MoleculeGraph]) -> BondVocabulary:
    if not graphs:
        raise ShapeError("cannot build a bond vocabulary from zero molecules")
    keys: set[str] = set()
    for g in graphs:
        keys.update(_graph_bond_keys(g))
    vocab = BondVocabulary(keys=sorted(keys))
    logger.info(f"Bond vocabulary: {len(vocab)} bond types")
    return vocab


def sum_over_bonds(graphs: list[MoleculeGraph], vocab: BondVocabulary) -> FeatureTable:
    index = vocab.index()
    counts = np.zeros((len(vocab), len(graphs)))
    for n, g in enumerate(graphs):
        for key in _graph_bond_keys(g):
            if key not in index:
                raise VocabularyError(f"molecule {g.molecule_id!r}: bond type {key!r} not in vocabulary")
            counts[index[key], n] += 1
    return FeatureTable(
        name="SOB",
        features=list(vocab.keys),
        data=counts,
        molecule_ids=[g.molecule_id for g in graphs],
    )


# ──────────────────────────────────────────────────────────────
# 2. Weight-matrix eigenspectrum
# ──────────────────────────────────────────────────────────────

def weight_matrix(g: MoleculeGraph) -> np.ndarray:
    """Symmetric atom×atom matrix of bond orders."""
    w = np.zeros((g.n_atoms, g.n_atoms))
    for bd in g.bonds:
        w[bd.i, bd.j] = w[bd.j, bd.i] = bd.order
    return w


def _padded_spectrum(m: np.ndarray, dmax: int) -> np.ndarray:
    out = np.zeros(dmax)
    if m.shape[0]:
        eig = linalg.eigh(m, eigvals_only=True)
        out[: len(eig)] = eig[::-1]
    return out


def weight_eigenspectrum(g: MoleculeGraph, dmax: int) -> np.ndarray:
    if g.n_atoms > dmax:
        raise ShapeError(f"molecule {g.molecule_id!r} has {g.n_atoms} atoms, more than dmax={dmax}")
    return _padded_spectrum(weight_matrix(g), dmax)


def weight_spectra_table(graphs: list[MoleculeGraph], dmax: int | None = None) -> FeatureTable:
    dmax = dmax or max(g.n_atoms for g in graphs)
    data = np.column_stack([weight_eigenspectrum(g, dmax) for g in graphs])
    return FeatureTable(
        name="WE",
        features=[f"WE_{i + 1}" for i in range(dmax)],
        data=data,
        molecule_ids=[g.molecule_id for g in graphs],
    )


def sob_table(graphs: list[MoleculeGraph], vocab: BondVocabulary | None = None) -> FeatureTable:
    return sum_over_bonds(graphs, vocab or build_bond_vocabulary(graphs))


# ──────────────────────────────────────────────────────────────
# 3. Coulomb-matrix eigenspectrum
# ──────────────────────────────────────────────────────────────

def coulomb_matrix(geometry: MoleculeGeometry, cfg: FusionConfig | None = None) -> np.ndarray:
    """C_ii = 0.5·Z_i^2.4, C_ij = Z_i·Z_j / |R_i − R_j| with R in Bohr."""
    cfg = cfg or DEFAULTS
    z = np.asarray(geometry.numbers, dtype=float)
    m = len(z)
    c = np.diag(0.5 * z ** cfg.coulomb_diag_exponent)
    if m > 1:
        dist = squareform(pdist(geometry.positions * cfg.bohr_per_angstrom))
        off = ~np.eye(m, dtype=bool)
        if np.any(dist[off] == 0):
            raise NumericalError(f"molecule {geometry.molecule_id!r}: coincident atoms")
        c[off] = (np.outer(z, z)[off]) / dist[off]
    return c


def coulomb_eigenspectrum(
    geometry: MoleculeGeometry,
    dmax: int,
    cfg: FusionConfig | None = None,
) -> np.ndarray:
    if geometry.n_atoms > dmax:
        raise ShapeError(
            f"molecule {geometry.molecule_id!r} has {geometry.n_atoms} atoms, more than dmax={dmax}"
        )
    return _padded_spectrum(coulomb_matrix(geometry, cfg), dmax)


def coulomb_spectra_table(geometries: GeometrySet, dmax: int | None = None) -> FeatureTable:
    mols = geometries.molecules
    dmax = dmax or max(m.n_atoms for m in mols)
    data = np.column_stack([coulomb_eigenspectrum(m, dmax) for m in mols])
    return FeatureTable(
        name="CME",
        features=[f"CME_{i + 1}" for i in range(dmax)],
        data=data,
        molecule_ids=[m.molecule_id for m in mols],
    )
