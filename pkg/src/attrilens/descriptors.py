"""Descriptor registry, fuzzy attribute resolution, and 14 calculators.

The registry enumerates the 53 canonical descriptor names the reward
verifier recognizes. Fourteen of them are implemented from scratch on the
:mod:`molgraph` model; the remainder resolve (so responses mentioning them
still parse as claims) but raise :class:`Unimplemented` when computed, which
the reward layer treats as "unverifiable".

Attribute mentions in model output are messy -- "Mol Weight", "PSA",
"Ringnumber" -- so resolution runs in three stages: exact canonical-name
match, exact alias match, then a normalized-edit-distance pass with a 0.80
similarity floor. Ties break toward the earlier registry entry. Anything
below the floor is no match, which callers receive as ``None``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .molgraph import ATOMIC_MASSES, Molecule

__all__ = [
    "DescriptorId",
    "DescriptorValue",
    "Unimplemented",
    "registry",
    "resolve_attribute",
    "compute",
    "compute_features",
    "implemented_names",
]

_DATA_DIR = Path(__file__).parent / "data"


class Unimplemented(NotImplementedError):
    """Descriptor is registered but has no calculator."""


@dataclass(frozen=True)
class DescriptorId:
    name: str
    index: int
    implemented: bool
    aliases: tuple[str, ...]


@dataclass(frozen=True)
class DescriptorValue:
    name: str
    value: float

    def __float__(self) -> float:
        return self.value


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _normalize(text: str) -> str:
    """Lowercase and strip everything but letters and digits."""
    return "".join(ch for ch in text.lower() if ch.isalnum())


@functools.lru_cache(maxsize=1)
def registry() -> tuple[DescriptorId, ...]:
    entries: list[DescriptorId] = []
    path = _DATA_DIR / "descriptor_registry.tsv"
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, implemented, aliases = (line.split("\t") + ["", ""])[:3]
        alias_tuple = tuple(a.strip() for a in aliases.split("|") if a.strip())
        entries.append(DescriptorId(name.strip(), len(entries),
                                    implemented.strip() == "1", alias_tuple))
    return tuple(entries)


@functools.lru_cache(maxsize=1)
def _lookup_tables() -> tuple[dict[str, DescriptorId], list[tuple[str, DescriptorId]]]:
    exact: dict[str, DescriptorId] = {}
    fuzzy_pool: list[tuple[str, DescriptorId]] = []
    for entry in registry():
        key = _normalize(entry.name)
        exact.setdefault(key, entry)
        fuzzy_pool.append((key, entry))
    for entry in registry():
        for alias in entry.aliases:
            key = _normalize(alias)
            exact.setdefault(key, entry)
            fuzzy_pool.append((key, entry))
    return exact, fuzzy_pool


def implemented_names() -> tuple[str, ...]:
    return tuple(e.name for e in registry() if e.implemented)


def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


_SIMILARITY_FLOOR = 0.80
# The floor as an exact rational (4/5): a candidate passes iff
# (denom - dist) / denom >= 4/5, i.e. 5 * dist <= denom. Checking it in
# integers keeps borderline names (similarity exactly 0.80) inside the
# match set, where float rounding of 1 - dist/denom would drop them.
_FLOOR_NUM, _FLOOR_DEN = 4, 5


@functools.lru_cache(maxsize=8192)
def resolve_attribute(raw_name: str) -> DescriptorId | None:
    """Map a free-text attribute mention to a registry entry, or ``None``.

    Resolution is idempotent on canonical names and deterministic: fuzzy
    ties at equal similarity go to the earlier registry entry.
    """
    key = _normalize(raw_name)
    if not key:
        return None
    exact, pool = _lookup_tables()
    hit = exact.get(key)
    if hit is not None:
        return hit
    best: DescriptorId | None = None
    best_sim = 0.0
    for cand_key, entry in pool:
        denom = max(len(key), len(cand_key))
        if denom == 0:
            continue
        # The length gap lower-bounds the distance; skip the DP when even
        # that already busts the floor.
        if _FLOOR_DEN * abs(len(key) - len(cand_key)) > (
            (_FLOOR_DEN - _FLOOR_NUM) * denom
        ):
            continue
        dist = _levenshtein(key, cand_key)
        if _FLOOR_DEN * dist > (_FLOOR_DEN - _FLOOR_NUM) * denom:
            continue
        sim = 1.0 - dist / denom
        # The pool is in registry order, so keeping the first maximum
        # breaks similarity ties toward the earlier entry.
        if sim > best_sim:
            best = entry
            best_sim = sim
    return best


# ---------------------------------------------------------------------------
# Environment-code pattern matching (shared by the parameter tables)
# ---------------------------------------------------------------------------

_HETERO_EXCLUDE = {"C", "H"}
_BOND_CHAR = {"single": "s", "double": "d", "triple": "t", "aromatic": "a"}
_BOND_SORT = {"s": 0, "d": 1, "t": 2, "a": 3}


@dataclass(frozen=True)
class _AtomEnv:
    element: str
    aromatic: bool
    total_h: int
    charge: int
    bonds: str                     # canonical heavy-bond multiset, e.g. "sdd"
    ring3: bool
    degree: int
    # neighbor tuples: (element, aromatic, bond char)
    neighbors: tuple[tuple[str, bool, str], ...]


def _atom_env(mol: Molecule, idx: int) -> _AtomEnv:
    atom = mol.atoms[idx]
    neigh = []
    chars = []
    for j, bond in mol.neighbors(idx):
        ch = _BOND_CHAR[bond.order]
        chars.append(ch)
        other = mol.atoms[j]
        neigh.append((other.element, other.aromatic, ch))
    bonds = "".join(sorted(chars, key=_BOND_SORT.__getitem__))
    return _AtomEnv(atom.element, atom.aromatic, atom.total_h,
                    atom.formal_charge, bonds, mol.atom_in_3ring(idx),
                    len(chars), tuple(neigh))


def _neighbor_in_class(neighbors, klass: str, single_only: bool) -> bool:
    for element, aromatic, bond_ch in neighbors:
        if single_only and bond_ch != "s":
            continue
        if klass == "a":
            if aromatic:
                return True
        elif klass == "c":
            if aromatic and element == "C":
                return True
        elif klass == "C":
            if not aromatic and element == "C":
                return True
        elif klass == "X":
            if element not in _HETERO_EXCLUDE:
                return True
        elif element == klass:
            return True
    return False


def _multibond_partner(neighbors, order_ch: str, klass: str) -> bool:
    for element, _aromatic, bond_ch in neighbors:
        if bond_ch != order_ch:
            continue
        if klass == "any":
            return True
        if klass == "C" and element == "C":
            return True
        if klass == "X" and element not in _HETERO_EXCLUDE:
            return True
    return False


def _pattern_matches(tokens: tuple[tuple[str, str], ...], env: _AtomEnv) -> bool:
    for key, val in tokens:
        if key == "*":
            continue
        if key == "el":
            if val == "hal":
                if env.element not in ("F", "Cl", "Br", "I", "At"):
                    return False
            elif env.element != val:
                return False
        elif key == "arom":
            if env.aromatic != (val == "1"):
                return False
        elif key == "h":
            if env.total_h != int(val):
                return False
        elif key == "hmin":
            if env.total_h < int(val):
                return False
        elif key == "hmax":
            if env.total_h > int(val):
                return False
        elif key == "chg":
            if env.charge != int(val):
                return False
        elif key == "chgpos":
            if not env.charge > 0:
                return False
        elif key == "chgneg":
            if not env.charge < 0:
                return False
        elif key == "bonds":
            if env.bonds != val:
                return False
        elif key == "ring3":
            if env.ring3 != (val == "1"):
                return False
        elif key == "degmin":
            if env.degree < int(val):
                return False
        elif key == "dbl":
            if val == "none":
                if any(ch == "d" for _, _, ch in env.neighbors):
                    return False
            elif not _multibond_partner(env.neighbors, "d", val):
                return False
        elif key == "tpl":
            if val == "none":
                if any(ch == "t" for _, _, ch in env.neighbors):
                    return False
            elif not _multibond_partner(env.neighbors, "t", val):
                return False
        elif key == "att":
            if not _neighbor_in_class(env.neighbors, val, single_only=False):
                return False
        elif key == "noatt":
            if _neighbor_in_class(env.neighbors, val, single_only=False):
                return False
        elif key == "satt":
            if not _neighbor_in_class(env.neighbors, val, single_only=True):
                return False
        else:
            raise ValueError(f"unknown pattern key {key!r}")
    return True


def _load_param_table(filename: str) -> list[tuple[str, tuple[tuple[str, str], ...], float]]:
    rows = []
    for line in (_DATA_DIR / filename).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        code, pattern, value = parts[0], parts[1], float(parts[2])
        if pattern == "*":
            tokens: tuple[tuple[str, str], ...] = (("*", ""),)
        else:
            tokens = tuple(tuple(tok.split("=", 1)) for tok in pattern.split(";"))  # type: ignore[misc]
        rows.append((code, tokens, value))
    return rows


@functools.lru_cache(maxsize=1)
def _crippen_table():
    return _load_param_table("crippen_params.tsv")


@functools.lru_cache(maxsize=1)
def _tpsa_table():
    return _load_param_table("tpsa_fragments.tsv")


def _match_contribution(table, env: _AtomEnv) -> float | None:
    for _code, tokens, value in table:
        if _pattern_matches(tokens, env):
            return value
    return None


# ---------------------------------------------------------------------------
# Calculators
# ---------------------------------------------------------------------------

_CALCULATORS: dict[str, callable] = {}


def _calculator(name: str):
    def deco(fn):
        _CALCULATORS[name] = fn
        return fn
    return deco


@_calculator("MolWt")
def _mol_wt(mol: Molecule) -> float:
    total = 0.0
    h_mass = ATOMIC_MASSES["H"]
    for atom in mol.atoms:
        total += atom.mass + atom.total_h * h_mass
    return total


@_calculator("HeavyAtomCount")
def _heavy_atom_count(mol: Molecule) -> float:
    return float(mol.heavy_atom_count)


@_calculator("MolLogP")
def _mol_logp(mol: Molecule) -> float:
    table = _crippen_table()
    total = 0.0
    for atom in mol.atoms:
        env = _atom_env(mol, atom.index)
        contrib = _match_contribution(table, env)
        total += contrib if contrib is not None else 0.0
        if atom.total_h:
            h_env = _AtomEnv("H", False, 0, 0, "s", False, 1,
                             ((atom.element, atom.aromatic, "s"),))
            h_contrib = _match_contribution(table, h_env) or 0.0
            total += atom.total_h * h_contrib
    return total


@_calculator("TPSA")
def _tpsa(mol: Molecule) -> float:
    table = _tpsa_table()
    total = 0.0
    for atom in mol.atoms:
        if atom.element not in ("N", "O"):
            continue
        contrib = _match_contribution(table, _atom_env(mol, atom.index))
        total += contrib if contrib is not None else 0.0
    return total


@_calculator("NumHDonors")
def _num_h_donors(mol: Molecule) -> float:
    """Count of O-H and N-H hydrogens (an NH2 contributes two)."""
    return float(sum(a.total_h for a in mol.atoms if a.element in ("N", "O")))


@_calculator("NumHAcceptors")
def _num_h_acceptors(mol: Molecule) -> float:
    """N and O atoms, excluding pyrrole-type nitrogens.

    A pyrrole-type nitrogen donates its lone pair into the aromatic system
    (aromatic N that carries an H or a third sigma bond), so it cannot
    accept; pyridine-type N and amide N both count under this deliberately
    inclusive convention.
    """
    count = 0
    for atom in mol.atoms:
        if atom.element == "O":
            count += 1
        elif atom.element == "N":
            if atom.aromatic and (atom.total_h > 0 or mol.degree(atom.index) > 2):
                continue
            count += 1
    return float(count)


@_calculator("NumRotatableBonds")
def _num_rotatable_bonds(mol: Molecule) -> float:
    """Single non-ring bonds with a heavy continuation on both sides,
    excluding amide C-N bonds (strict convention)."""

    def heavy_degree(idx: int) -> int:
        return sum(1 for j, _ in mol.neighbors(idx) if mol.atoms[j].element != "H")

    def is_amide_cn(a_idx: int, n_idx: int) -> bool:
        if mol.atoms[a_idx].element != "C" or mol.atoms[n_idx].element != "N":
            return False
        return any(bond.order == "double" and mol.atoms[j].element == "O"
                   for j, bond in mol.neighbors(a_idx))

    count = 0
    for bi, bond in enumerate(mol.bonds):
        if bond.order != "single" or mol.bond_in_ring(bi):
            continue
        a, b = bond.a, bond.b
        if mol.atoms[a].element == "H" or mol.atoms[b].element == "H":
            continue
        if heavy_degree(a) < 2 or heavy_degree(b) < 2:
            continue
        if is_amide_cn(a, b) or is_amide_cn(b, a):
            continue
        count += 1
    return float(count)


@_calculator("RingCount")
def _ring_count(mol: Molecule) -> float:
    return float(len(mol.rings))


@_calculator("NumAromaticRings")
def _num_aromatic_rings(mol: Molecule) -> float:
    count = 0
    for ring in mol.rings:
        if all(mol.atoms[i].aromatic for i in ring):
            closed = all(
                any(j == ring[(k + 1) % len(ring)] and bond.order == "aromatic"
                    for j, bond in mol.neighbors(ring[k]))
                for k in range(len(ring))
            )
            if closed:
                count += 1
    return float(count)


@_calculator("FractionCSP3")
def _fraction_csp3(mol: Molecule) -> float:
    carbons = 0
    sp3 = 0
    for atom in mol.atoms:
        if atom.element != "C":
            continue
        carbons += 1
        if atom.aromatic:
            continue
        if all(bond.order == "single" for _, bond in mol.neighbors(atom.index)):
            sp3 += 1
    return sp3 / carbons if carbons else 0.0


@_calculator("NumSulfurAtoms")
def _num_sulfur(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element == "S"))


@_calculator("NumHalogenAtoms")
def _num_halogens(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element in ("F", "Cl", "Br", "I", "At")))


@_calculator("FormalCharge")
def _formal_charge(mol: Molecule) -> float:
    return float(sum(a.formal_charge for a in mol.atoms))


@_calculator("NumNitrogenPlusOxygen")
def _num_n_plus_o(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element in ("N", "O")))


# ---------------------------------------------------------------------------
# Public compute API
# ---------------------------------------------------------------------------


def _as_descriptor_id(ident: "DescriptorId | str") -> DescriptorId:
    if isinstance(ident, DescriptorId):
        return ident
    exact, _ = _lookup_tables()
    hit = exact.get(_normalize(ident))
    if hit is None or hit.name != ident:
        # compute() is strict: only canonical names, no fuzzy repair.
        for entry in registry():
            if entry.name == ident:
                return entry
        raise KeyError(f"unknown descriptor {ident!r}")
    return hit


def compute(mol: Molecule, ident: "DescriptorId | str") -> DescriptorValue:
    """Compute one descriptor; raises :class:`Unimplemented` for the
    name-only registry entries. Values are cached on the molecule."""
    entry = _as_descriptor_id(ident)
    cached = mol.descriptor_cache.get(entry.name)
    if cached is not None:
        return DescriptorValue(entry.name, cached)
    fn = _CALCULATORS.get(entry.name)
    if fn is None:
        raise Unimplemented(f"descriptor {entry.name} has no calculator")
    value = float(fn(mol))
    mol.descriptor_cache[entry.name] = value
    return DescriptorValue(entry.name, value)


def compute_features(mol: Molecule, idents) -> np.ndarray:
    """Feature vector over the given descriptors, in the given order."""
    return np.array([compute(mol, ident).value for ident in idents], dtype=float)
