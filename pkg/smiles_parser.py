"""
SMILES parser - practical subset sufficient for bond-count and weight-matrix featurization.

Supported grammar:
  - organic-subset atoms  B C N O P S F Cl Br I, aromatic b c n o s p
  - bracket atoms         [isotope? symbol chirality? H-count? charge? class?]
  - bonds                 - = # :  (/ and \\ read as single bonds, stereo discarded)
  - branches ( ), ring closures 0-9 and %nn, '.' disconnections

Implicit hydrogens are materialized as explicit H atoms, appended after the
parsed atoms in attachment order. Atom numbering follows token order.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass, field

from errors import ParseError
from models import Bond, GraphAtom, MoleculeGraph

logger = logging.getLogger(__name__)


ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_SUBSET = ("b", "c", "n", "o", "s", "p")

# Standard implicit-hydrogen valences; multi-valence elements take the
# smallest valence ≥ the current bond-order sum.
VALENCES: dict[str, tuple[int, ...]] = {
    "H": (1,),
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

DIGITS = "0123456789"

BOND_ORDERS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5}

_BRACKET = re.compile(
    r"^\[(?P<isotope>\d+)?"
    r"(?P<symbol>Cl|Br|[BCNOPSFIH]|[bcnops])"
    r"(?P<chiral>@@?(?:TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-]+\d*)?"
    r"(?::\d+)?\]$",
    re.ASCII,
)


@enum.unique
class TokenType(enum.Enum):
    ATOM = 1
    BRACKET_ATOM = 2
    BOND = 3
    STEREO_BOND = 4
    BRANCH_START = 5
    BRANCH_END = 6
    RING_NUM = 7
    DOT = 8


@dataclass(frozen=True)
class Token:
    kind: TokenType
    text: str
    offset: int


def _tokenize(s: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "[":
            end = s.find("]", i)
            if end < 0:
                raise ParseError("unterminated bracket atom", offset=i)
            tokens.append(Token(TokenType.BRACKET_ATOM, s[i:end + 1], i))
            i = end + 1
        elif s[i:i + 2] in ("Cl", "Br"):
            tokens.append(Token(TokenType.ATOM, s[i:i + 2], i))
            i += 2
        elif ch in ORGANIC_SUBSET or ch in AROMATIC_SUBSET:
            tokens.append(Token(TokenType.ATOM, ch, i))
            i += 1
        elif ch in BOND_ORDERS:
            tokens.append(Token(TokenType.BOND, ch, i))
            i += 1
        elif ch in "/\\":
            tokens.append(Token(TokenType.STEREO_BOND, ch, i))
            i += 1
        elif ch == "(":
            tokens.append(Token(TokenType.BRANCH_START, ch, i))
            i += 1
        elif ch == ")":
            tokens.append(Token(TokenType.BRANCH_END, ch, i))
            i += 1
        elif ch in DIGITS:
            tokens.append(Token(TokenType.RING_NUM, ch, i))
            i += 1
        elif ch == "%":
            digits = s[i + 1:i + 3]
            if len(digits) != 2 or not all(c in DIGITS for c in digits):
                raise ParseError("'%' must be followed by two digits", offset=i)
            tokens.append(Token(TokenType.RING_NUM, digits, i))
            i += 3
        elif ch == ".":
            tokens.append(Token(TokenType.DOT, ch, i))
            i += 1
        else:
            raise ParseError(f"unknown symbol {ch!r}", offset=i)
    return tokens


def _parse_charge(text: str | None, offset: int) -> int:
    if not text:
        return 0
    signs = text.rstrip("0123456789")
    digits = text[len(signs):]
    if len(set(signs)) != 1 or (digits and len(signs) != 1):
        raise ParseError(f"malformed charge {text!r}", offset=offset)
    sign = 1 if signs[0] == "+" else -1
    return sign * (int(digits) if digits else len(signs))


@dataclass
class _Atom:
    element: str
    aromatic: bool
    offset: int
    bracket: bool = False
    charge: int = 0
    hcount: int | None = None
    isotope: int | None = None


@dataclass
class _Builder:
    smiles: str
    atoms: list[_Atom] = field(default_factory=list)
    bonds: dict[tuple[int, int], float] = field(default_factory=dict)

    def add_bond(self, i: int, j: int, order: float | None, offset: int) -> None:
        if i == j:
            raise ParseError("ring closure bonds an atom to itself", offset=offset)
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            raise ParseError(f"duplicate bond between atoms {key}", offset=offset)
        both_aromatic = self.atoms[i].aromatic and self.atoms[j].aromatic
        if order is None:
            order = 1.5 if both_aromatic else 1.0
        elif order == 1.5 and not both_aromatic:
            raise ParseError("aromatic bond between non-aromatic atoms", offset=offset)
        self.bonds[key] = order


def _bracket_atom(tok: Token) -> _Atom:
    m = _BRACKET.match(tok.text)
    if m is None:
        raise ParseError(f"unknown or unsupported bracket atom {tok.text!r}", offset=tok.offset)
    symbol = m.group("symbol")
    hc = m.group("hcount")
    return _Atom(
        element=symbol.capitalize() if symbol in AROMATIC_SUBSET else symbol,
        aromatic=symbol in AROMATIC_SUBSET,
        offset=tok.offset,
        bracket=True,
        charge=_parse_charge(m.group("charge"), tok.offset),
        hcount=(int(hc[1:]) if len(hc) > 1 else 1) if hc else 0,
        isotope=int(m.group("isotope")) if m.group("isotope") else None,
    )


# ──────────────────────────────────────────────────────────────
# Hydrogen materialization
# ──────────────────────────────────────────────────────────────

def _implicit_hydrogens(atom: _Atom, orders: list[float]) -> int:
    """Number of implicit H for an organic-subset atom."""
    valences = VALENCES[atom.element]
    if not atom.aromatic:
        total = sum(orders)
        for v in valences:
            if v >= total:
                return int(v - total)
        raise ParseError(
            f"valence overflow on {atom.element}: bond-order sum {total:g} exceeds {max(valences)}",
            offset=atom.offset,
        )

    # Aromatic: each aromatic bond counts 1, plus one π bond when the
    # lowest valence leaves room for it; otherwise the atom is a lone-pair donor.
    n_arom = sum(1 for o in orders if o == 1.5)
    base = sum(o for o in orders if o != 1.5) + n_arom
    low = min(valences)
    if base + 1 <= low:
        return int(low - base - 1)
    if base <= low:
        return int(low - base)
    raise ParseError(
        f"valence overflow on aromatic {atom.element}: {n_arom} aromatic bonds",
        offset=atom.offset,
    )


def _check_bracket_valence(atom: _Atom, orders: list[float]) -> None:
    n_arom = sum(1 for o in orders if o == 1.5)
    total = sum(o for o in orders if o != 1.5) + n_arom + (atom.hcount or 0)
    shift = atom.charge if atom.element in ("N", "O") else abs(atom.charge)
    allowed = max(VALENCES[atom.element]) + shift
    if total > allowed:
        raise ParseError(
            f"valence overflow on [{atom.element}]: bond-order sum {total:g} exceeds {allowed}",
            offset=atom.offset,
        )


# ──────────────────────────────────────────────────────────────
# Public API
# ──────────────────────────────────────────────────────────────

def parse_smiles(s: str, id: str = "") -> MoleculeGraph:
    """Parse a SMILES string into a MoleculeGraph with explicit hydrogens."""
    if not s or not s.strip():
        raise ParseError("empty SMILES string", offset=0)
    s = s.strip()

    b = _Builder(smiles=s)
    anchor: int | None = None
    pending: tuple[float, int] | None = None  # (order, offset)
    branches: list[tuple[int, int]] = []       # (anchor, offset of '(')
    rings: dict[int, tuple[int, float | None, int]] = {}

    for tok in _tokenize(s):
        if tok.kind in (TokenType.ATOM, TokenType.BRACKET_ATOM):
            if tok.kind == TokenType.ATOM:
                aromatic = tok.text in AROMATIC_SUBSET
                atom = _Atom(element=tok.text.capitalize() if aromatic else tok.text,
                             aromatic=aromatic, offset=tok.offset)
            else:
                atom = _bracket_atom(tok)
            b.atoms.append(atom)
            idx = len(b.atoms) - 1
            if anchor is not None:
                b.add_bond(anchor, idx, pending[0] if pending else None, tok.offset)
            elif pending is not None:
                raise ParseError("bond symbol without a preceding atom", offset=pending[1])
            pending = None
            anchor = idx

        elif tok.kind == TokenType.BOND:
            if pending is not None:
                raise ParseError("two consecutive bond symbols", offset=tok.offset)
            pending = (BOND_ORDERS[tok.text], tok.offset)

        elif tok.kind == TokenType.STEREO_BOND:
            if pending is not None:
                raise ParseError("two consecutive bond symbols", offset=tok.offset)
            pending = (1.0, tok.offset)

        elif tok.kind == TokenType.BRANCH_START:
            if anchor is None:
                raise ParseError("branch without a preceding atom", offset=tok.offset)
            branches.append((anchor, tok.offset))

        elif tok.kind == TokenType.BRANCH_END:
            if not branches:
                raise ParseError("unmatched ')'", offset=tok.offset)
            if pending is not None:
                raise ParseError("dangling bond before ')'", offset=pending[1])
            anchor, _ = branches.pop()

        elif tok.kind == TokenType.RING_NUM:
            if anchor is None:
                raise ParseError("ring-closure digit without a preceding atom", offset=tok.offset)
            num = int(tok.text)
            order = pending[0] if pending else None
            if num in rings:
                other, other_order, _ = rings.pop(num)
                if order is not None and other_order is not None and order != other_order:
                    raise ParseError(f"conflicting bond orders for ring closure {num}", offset=tok.offset)
                b.add_bond(other, anchor, order if order is not None else other_order, tok.offset)
            else:
                rings[num] = (anchor, order, tok.offset)
            pending = None

        elif tok.kind == TokenType.DOT:
            if pending is not None:
                raise ParseError("bond symbol before '.'", offset=pending[1])
            anchor = None

    if pending is not None:
        raise ParseError("dangling bond at end of string", offset=pending[1])
    if branches:
        raise ParseError("unmatched '('", offset=branches[-1][1])
    if rings:
        first = min(rings.values(), key=lambda r: r[2])
        raise ParseError("unmatched ring-closure digit", offset=first[2])

    # ── Materialize hydrogens ──
    incident: list[list[float]] = [[] for _ in b.atoms]
    for (i, j), order in b.bonds.items():
        incident[i].append(order)
        incident[j].append(order)

    atoms = [
        GraphAtom(element=a.element, aromatic=a.aromatic, charge=a.charge,
                  hcount=a.hcount if a.bracket else None, isotope=a.isotope)
        for a in b.atoms
    ]
    bonds = [Bond(i=i, j=j, order=o) for (i, j), o in b.bonds.items()]
    for idx, a in enumerate(b.atoms):
        if a.bracket:
            _check_bracket_valence(a, incident[idx])
            n_h = a.hcount or 0
        else:
            n_h = _implicit_hydrogens(a, incident[idx])
        for _ in range(n_h):
            atoms.append(GraphAtom(element="H"))
            bonds.append(Bond(i=idx, j=len(atoms) - 1, order=1.0))

    return MoleculeGraph(molecule_id=id, atoms=atoms, bonds=bonds)


def parse_smiles_list(entries: list[tuple[str, str]]) -> list[MoleculeGraph]:
    """[(id, smiles)] → graphs; parse errors name the molecule."""
    graphs = []
    for mol_id, smi in entries:
        try:
            graphs.append(parse_smiles(smi, mol_id))
        except ParseError as e:
            raise ParseError(f"molecule {mol_id!r} ({smi}): {e}") from e
    logger.info(f"Parsed {len(graphs)} SMILES")
    return graphs


def heavy_atom_count(g: MoleculeGraph) -> int:
    return sum(1 for a in g.atoms if a.element != "H")


def bond_order_sum_matches_valence(g: MoleculeGraph) -> bool:
    """True when every non-aromatic implicit-H atom sits exactly at a standard valence."""
    sums = g.bond_order_sums()
    for a, total in zip(g.atoms, sums):
        if a.element == "H" or a.hcount is not None or a.aromatic:
            continue
        if not math.isclose(total, min(v for v in VALENCES[a.element] if v >= total)):
            return False
    return True
