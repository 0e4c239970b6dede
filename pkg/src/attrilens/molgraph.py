"""Minimal molecular graph model built from SMILES text.

The parser covers the organic subset, bracket atoms (isotope, chirality,
explicit hydrogens, charge, atom class), ring-closure labels including the
``%nn`` form, branches, and dot-separated components.  Stereo markers are
accepted and recorded but play no further role: every downstream consumer
(descriptors, scaffolds) is stereochemistry-blind.

Aromaticity is taken at face value for lowercase input.  Kekule input is
aromatized by a deliberately simple Hueckel-style pass: a ring becomes
aromatic when every member is sp2-capable and the ring pi count is 4n+2,
with fused partners contributing one electron through the shared bond.
This perceives ordinary benzenoids, pyridines, azoles and their fusions;
exotic systems (azulenes written in Kekule form, charged rings) are out of
scope and simply stay aliphatic.

Implicit hydrogens follow the usual SMILES conventions: bracket atoms have
exactly the hydrogens they declare, bare organic-subset atoms fill up to
the smallest default valence that accommodates their explicit bonds, and
bare aromatic atoms fill up to valence minus (degree + 1), the extra unit
standing in for the delocalized pi bond.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

__all__ = [
    "Atom",
    "Bond",
    "Molecule",
    "SmilesError",
    "UnbalancedRing",
    "UnbalancedBranch",
    "UnknownElement",
    "ValenceError",
    "parse_smiles",
    "from_graph",
    "murcko_scaffold",
    "molecule_key",
    "scaffold_key",
    "write_smiles",
    "EMPTY_SCAFFOLD_KEY",
]


class SmilesError(ValueError):
    """Base class for rejected SMILES input."""


class UnbalancedRing(SmilesError):
    """Ring-closure label opened but never closed, or closed inconsistently."""


class UnbalancedBranch(SmilesError):
    """Parenthesis nesting does not balance."""


class UnknownElement(SmilesError):
    """Atom symbol outside the supported element set."""


class ValenceError(SmilesError):
    """Explicit valence exceeds the maximum for a bare organic-subset atom."""


# Elements that may be written without brackets.
ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}

# Elements allowed to carry the aromatic flag.
AROMATIC_ELEMENTS = {"B", "C", "N", "O", "P", "S", "Se", "As"}

# Default valences; multi-valent elements list alternatives in increasing
# order and the smallest one that fits the explicit bonds wins.
DEFAULT_VALENCES: dict[str, tuple[int, ...]] = {
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

# Standard atomic weights, enough to cover MoleculeNet-style corpora.
ATOMIC_MASSES: dict[str, float] = {
    "H": 1.008, "He": 4.003, "Li": 6.941, "Be": 9.012, "B": 10.811,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.086, "P": 30.974,
    "S": 32.067, "Cl": 35.453, "Ar": 39.948, "K": 39.098, "Ca": 40.078,
    "Ti": 47.867, "V": 50.942, "Cr": 51.996, "Mn": 54.938, "Fe": 55.845,
    "Co": 58.933, "Ni": 58.693, "Cu": 63.546, "Zn": 65.38, "Ga": 69.723,
    "Ge": 72.63, "As": 74.922, "Se": 78.971, "Br": 79.904, "Kr": 83.798,
    "Rb": 85.468, "Sr": 87.62, "Zr": 91.224, "Mo": 95.95, "Ru": 101.07,
    "Rh": 102.906, "Pd": 106.42, "Ag": 107.868, "Cd": 112.414,
    "In": 114.818, "Sn": 118.711, "Sb": 121.760, "Te": 127.60,
    "I": 126.904, "Xe": 131.294, "Cs": 132.905, "Ba": 137.328,
    "La": 138.905, "Gd": 157.25, "W": 183.84, "Pt": 195.085,
    "Au": 196.967, "Hg": 200.592, "Tl": 204.383, "Pb": 207.21,
    "Bi": 208.980,
}

BOND_ORDER_VALUE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}

_BOND_CHAR_ORDER = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                    "/": "single", "\\": "single"}


@dataclass
class Atom:
    """One heavy atom (or explicit [H]) of the graph."""

    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0
    isotope: int | None = None
    index: int = -1
    bracket: bool = False
    chirality: str | None = None
    implicit_h: int = 0

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h

    @property
    def mass(self) -> float:
        if self.isotope is not None:
            # Approximate isotope mass by its mass number; good enough for
            # the desk-scale weight descriptor.
            return float(self.isotope)
        return ATOMIC_MASSES[self.element]


@dataclass
class Bond:
    a: int
    b: int
    order: str  # single | double | triple | aromatic
    stereo: str | None = None  # '/' or '\\' as written; ignored downstream

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a

    @property
    def order_value(self) -> float:
        return BOND_ORDER_VALUE[self.order]


class Molecule:
    """Immutable-by-convention molecular graph.

    ``rings`` holds a smallest-set-of-smallest-rings-sized cycle basis; each
    ring is a tuple of atom indices in traversal order.  Mutating a finished
    Molecule is unsupported -- derived fields (adjacency, ring membership,
    cached descriptor values) would go stale.
    """

    __slots__ = ("atoms", "bonds", "rings", "source", "component_of",
                 "n_components", "_adj", "_ring_bonds", "_ring_atoms",
                 "_ring3_atoms", "descriptor_cache")

    def __init__(self, atoms: list[Atom], bonds: list[Bond], source: str = ""):
        self.atoms = atoms
        self.bonds = bonds
        self.source = source
        self.rings: list[tuple[int, ...]] = []
        self.component_of: list[int] = []
        self.n_components = 0
        self._adj: list[list[tuple[int, int]]] = []
        self._ring_bonds: set[int] = set()
        self._ring_atoms: set[int] = set()
        self._ring3_atoms: set[int] = set()
        self.descriptor_cache: dict[str, float] = {}

    # -- basic queries -------------------------------------------------

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def heavy_atom_count(self) -> int:
        return sum(1 for a in self.atoms if a.element != "H")

    def neighbors(self, idx: int) -> list[tuple[int, Bond]]:
        """(neighbor index, connecting bond) pairs, in construction order."""
        return [(j, self.bonds[bi]) for j, bi in self._adj[idx]]

    def degree(self, idx: int) -> int:
        return len(self._adj[idx])

    def bond_in_ring(self, bond_index: int) -> bool:
        return bond_index in self._ring_bonds

    def atom_in_ring(self, idx: int) -> bool:
        return idx in self._ring_atoms

    def atom_in_3ring(self, idx: int) -> bool:
        return idx in self._ring3_atoms

    def bond_order_sum(self, idx: int) -> float:
        return sum(self.bonds[bi].order_value for _, bi in self._adj[idx])

    def largest_component(self) -> "Molecule":
        """Sub-molecule holding the component with the most heavy atoms.

        Ties break toward the lower component label, i.e. the one whose
        first atom appears earliest in the input.
        """
        if self.n_components <= 1:
            return self
        counts: dict[int, int] = {}
        for atom in self.atoms:
            if atom.element != "H":
                comp = self.component_of[atom.index]
                counts[comp] = counts.get(comp, 0) + 1
        best = max(sorted(counts), key=lambda c: counts[c])
        keep = [i for i in range(len(self.atoms)) if self.component_of[i] == best]
        return _subgraph(self, keep)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_smiles(text: str) -> Molecule:
    """Parse SMILES into a finished Molecule.

    Raises a :class:`SmilesError` subclass on malformed input; never returns
    a partially built graph.
    """
    if not isinstance(text, str):
        raise SmilesError("SMILES must be a string")
    smiles = text.strip()
    if not smiles:
        raise SmilesError("empty SMILES")

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    prev: int | None = None
    pending_order: str | None = None
    pending_stereo: str | None = None
    branch_stack: list[int | None] = []
    # ring label -> (atom index, bond order or None, stereo)
    open_rings: dict[str, tuple[int, str | None, str | None]] = {}

    def add_atom(atom: Atom) -> None:
        nonlocal prev, pending_order, pending_stereo
        atom.index = len(atoms)
        atoms.append(atom)
        if prev is not None:
            order = pending_order
            if order is None:
                order = "aromatic" if (atoms[prev].aromatic and atom.aromatic) else "single"
            bonds.append(Bond(prev, atom.index, order, pending_stereo))
        prev = atom.index
        pending_order = None
        pending_stereo = None

    def close_ring(label: str) -> None:
        nonlocal pending_order, pending_stereo
        if prev is None:
            raise UnbalancedRing(f"ring label {label!r} before any atom")
        if label in open_rings:
            start, order0, stereo0 = open_rings.pop(label)
            if start == prev:
                raise UnbalancedRing(f"ring label {label!r} closes onto its own atom")
            order = pending_order if pending_order is not None else order0
            if (pending_order is not None and order0 is not None
                    and pending_order != order0):
                raise UnbalancedRing(
                    f"ring label {label!r} opened as {order0} but closed as {pending_order}")
            if order is None:
                order = ("aromatic"
                         if (atoms[start].aromatic and atoms[prev].aromatic)
                         else "single")
            bonds.append(Bond(start, prev, order, pending_stereo or stereo0))
        else:
            open_rings[label] = (prev, pending_order, pending_stereo)
        pending_order = None
        pending_stereo = None

    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch in " \t":
            raise SmilesError(f"whitespace inside SMILES at position {i}")
        if ch == "(":
            if prev is None:
                raise UnbalancedBranch("branch opened before any atom")
            branch_stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise UnbalancedBranch("unmatched ')'")
            if pending_order is not None:
                raise SmilesError("dangling bond before ')'")
            prev = branch_stack.pop()
            i += 1
            continue
        if ch == ".":
            if pending_order is not None or branch_stack:
                raise SmilesError("dot separator inside branch or after bond")
            prev = None
            i += 1
            continue
        if ch in _BOND_CHAR_ORDER:
            if pending_order is not None:
                raise SmilesError(f"two bond symbols in a row at position {i}")
            pending_order = _BOND_CHAR_ORDER[ch]
            if ch in "/\\":
                pending_stereo = ch
            i += 1
            continue
        if ch.isdigit():
            close_ring(ch)
            i += 1
            continue
        if ch == "%":
            if i + 2 >= n or not smiles[i + 1 : i + 3].isdigit():
                raise UnbalancedRing(f"bad %nn ring label at position {i}")
            close_ring(smiles[i + 1 : i + 3])
            i += 3
            continue
        if ch == "[":
            j = smiles.find("]", i)
            if j < 0:
                raise SmilesError("unterminated bracket atom")
            add_atom(_parse_bracket(smiles[i + 1 : j], i))
            i = j + 1
            continue
        # Bare atom: two-letter symbols first.
        two = smiles[i : i + 2]
        if two in ("Cl", "Br"):
            add_atom(Atom(two))
            i += 2
            continue
        if ch in "BCNOPSFI":
            add_atom(Atom(ch))
            i += 1
            continue
        if ch in "bcnops":
            add_atom(Atom(ch.upper(), aromatic=True))
            i += 1
            continue
        raise UnknownElement(f"unexpected character {ch!r} at position {i}")

    if branch_stack:
        raise UnbalancedBranch(f"{len(branch_stack)} unclosed '('")
    if open_rings:
        raise UnbalancedRing(f"unclosed ring labels: {sorted(open_rings)}")
    if pending_order is not None:
        raise SmilesError("dangling bond at end of SMILES")
    if not atoms:
        raise SmilesError("no atoms parsed")

    mol = Molecule(atoms, bonds, source=text)
    _finalize(mol, trust_h_counts=False)
    return mol


def _parse_bracket(body: str, pos: int) -> Atom:
    """Parse the interior of a bracket atom expression."""
    if not body:
        raise SmilesError(f"empty bracket atom at position {pos}")
    k, m = 0, len(body)
    isotope = None
    if body[k].isdigit():
        start = k
        while k < m and body[k].isdigit():
            k += 1
        isotope = int(body[start:k])
    if k >= m:
        raise SmilesError(f"bracket atom lacks an element symbol at position {pos}")
    aromatic = False
    if body[k].isupper():
        symbol = body[k]
        k += 1
        if k < m and body[k].islower() and (symbol + body[k]) in ATOMIC_MASSES:
            symbol += body[k]
            k += 1
    elif body[k].islower():
        # Aromatic bracket atoms: single letters plus se/as.
        if body[k : k + 2] in ("se", "as"):
            symbol = body[k : k + 2].capitalize()
            k += 2
        else:
            symbol = body[k].upper()
            k += 1
        aromatic = True
        if symbol not in AROMATIC_ELEMENTS:
            raise UnknownElement(f"aromatic form of {symbol!r} not supported")
    else:
        raise SmilesError(f"bad bracket atom {body!r}")
    if symbol == "H":
        if isotope is None and body[:1].isdigit():
            pass
    elif symbol not in ATOMIC_MASSES:
        raise UnknownElement(f"unknown element {symbol!r}")

    chirality = None
    if k < m and body[k] == "@":
        k += 1
        if k < m and body[k] == "@":
            chirality = "@@"
            k += 1
        else:
            chirality = "@"
        # Named chirality classes (@TH1, @AL2, ...): a two-letter code plus
        # digits. Checking for the trailing digit keeps hydrogen counts
        # ([C@H]) out of this branch.
        if (body[k : k + 2] in ("TH", "AL", "SP", "TB", "OH")
                and k + 2 < m and body[k + 2].isdigit()):
            k += 2
            while k < m and body[k].isdigit():
                k += 1

    explicit_h = 0
    if k < m and body[k] == "H":
        k += 1
        count = ""
        while k < m and body[k].isdigit():
            count += body[k]
            k += 1
        explicit_h = int(count) if count else 1

    charge = 0
    if k < m and body[k] in "+-":
        sign = 1 if body[k] == "+" else -1
        k += 1
        if k < m and body[k].isdigit():
            num = ""
            while k < m and body[k].isdigit():
                num += body[k]
                k += 1
            charge = sign * int(num)
        else:
            charge = sign
            while k < m and body[k] == body[k - 1]:
                charge += sign
                k += 1

    if k < m and body[k] == ":":
        k += 1
        if k >= m or not body[k:].isdigit():
            raise SmilesError(f"bad atom class in bracket atom {body!r}")
        k = m  # atom class parsed and ignored

    if k != m:
        raise SmilesError(f"trailing junk in bracket atom {body!r}")

    return Atom(symbol, formal_charge=charge, aromatic=aromatic,
                explicit_h=explicit_h, isotope=isotope, bracket=True,
                chirality=chirality)


# ---------------------------------------------------------------------------
# Finalization: components, rings, aromaticity, hydrogens, valence
# ---------------------------------------------------------------------------


def _finalize(mol: Molecule, trust_h_counts: bool) -> None:
    """Derive everything beyond raw atoms/bonds.

    ``trust_h_counts`` is used when rebuilding subgraphs whose atoms already
    carry correct bracket hydrogen counts; implicit hydrogens of bare atoms
    are always rederived.
    """
    _build_adjacency(mol)
    _label_components(mol)
    _perceive_rings(mol)
    _demote_nonring_aromatics(mol)
    _assign_implicit_h(mol)
    _check_valences(mol)
    _aromatize_kekule(mol)
    _build_adjacency(mol)  # bond orders may have changed; cheap to redo


def _build_adjacency(mol: Molecule) -> None:
    adj: list[list[tuple[int, int]]] = [[] for _ in mol.atoms]
    for bi, bond in enumerate(mol.bonds):
        adj[bond.a].append((bond.b, bi))
        adj[bond.b].append((bond.a, bi))
    mol._adj = adj


def _label_components(mol: Molecule) -> None:
    label = [-1] * len(mol.atoms)
    comp = 0
    for start in range(len(mol.atoms)):
        if label[start] >= 0:
            continue
        stack = [start]
        label[start] = comp
        while stack:
            i = stack.pop()
            for j, _ in mol._adj[i]:
                if label[j] < 0:
                    label[j] = comp
                    stack.append(j)
        comp += 1
    mol.component_of = label
    mol.n_components = comp


def _perceive_rings(mol: Molecule) -> None:
    """Fill ``mol.rings`` with an SSSR-sized basis of shortest cycles.

    Candidates are the shortest cycle through every bond (found by BFS with
    that bond removed) plus the fundamental cycles of a spanning forest as a
    completeness fallback; a greedy pass keeps candidates that are linearly
    independent over GF(2) in bond space until the cyclomatic number is met.
    """
    n_rings = len(mol.bonds) - len(mol.atoms) + mol.n_components
    mol.rings = []
    mol._ring_bonds = set()
    mol._ring_atoms = set()
    mol._ring3_atoms = set()
    if n_rings <= 0:
        return

    candidates: list[tuple[int, tuple[int, ...], int]] = []  # (size, atoms, bond mask)
    seen_masks: set[int] = set()

    def record(path: list[int]) -> None:
        mask = 0
        ok = True
        for k in range(len(path)):
            bi = _bond_between(mol, path[k], path[(k + 1) % len(path)])
            if bi is None:
                ok = False
                break
            mask |= 1 << bi
        if ok and mask not in seen_masks:
            seen_masks.add(mask)
            lowest = min(range(len(path)), key=lambda k: path[k])
            rotated = path[lowest:] + path[:lowest]
            if len(rotated) > 2 and rotated[1] > rotated[-1]:
                rotated = [rotated[0]] + rotated[1:][::-1]
            candidates.append((len(path), tuple(rotated), mask))

    for skip_bi, bond in enumerate(mol.bonds):
        path = _shortest_path_avoiding(mol, bond.a, bond.b, skip_bi)
        if path is not None:
            record(path)

    # Spanning-forest fundamental cycles guarantee a full basis even if some
    # shortest-cycle search failed (it cannot for connected ring systems,
    # but completeness is cheap to keep).
    parent: dict[int, tuple[int, int]] = {}
    visited = [False] * len(mol.atoms)
    tree_bonds: set[int] = set()
    for start in range(len(mol.atoms)):
        if visited[start]:
            continue
        visited[start] = True
        queue = [start]
        while queue:
            i = queue.pop(0)
            for j, bi in mol._adj[i]:
                if not visited[j]:
                    visited[j] = True
                    parent[j] = (i, bi)
                    tree_bonds.add(bi)
                    queue.append(j)
    for bi, bond in enumerate(mol.bonds):
        if bi in tree_bonds:
            continue
        path_a = _root_path(parent, bond.a)
        path_b = _root_path(parent, bond.b)
        common = set(path_a) & set(path_b)
        cut_a = next(k for k, v in enumerate(path_a) if v in common)
        anchor = path_a[cut_a]
        cut_b = path_b.index(anchor)
        cycle = path_a[:cut_a + 1] + path_b[:cut_b][::-1]
        if len(cycle) >= 3:
            record(cycle)

    candidates.sort(key=lambda c: (c[0], c[1]))
    basis: list[int] = []
    rings: list[tuple[int, ...]] = []
    for _, ring_atoms, mask in candidates:
        reduced = mask
        for b in basis:
            reduced = min(reduced, reduced ^ b)
        if reduced:
            basis.append(reduced)
            basis.sort(reverse=True)
            rings.append(ring_atoms)
            if len(rings) == n_rings:
                break

    mol.rings = rings
    for ring in rings:
        mol._ring_atoms.update(ring)
        if len(ring) == 3:
            mol._ring3_atoms.update(ring)
        for k in range(len(ring)):
            bi = _bond_between(mol, ring[k], ring[(k + 1) % len(ring)])
            if bi is not None:
                mol._ring_bonds.add(bi)


def _bond_between(mol: Molecule, i: int, j: int) -> int | None:
    for nb, bi in mol._adj[i]:
        if nb == j:
            return bi
    return None


def _shortest_path_avoiding(mol: Molecule, src: int, dst: int,
                            skip_bond: int) -> list[int] | None:
    prev = {src: -1}
    queue = [src]
    while queue:
        nxt: list[int] = []
        for i in queue:
            for j, bi in mol._adj[i]:
                if bi == skip_bond or j in prev:
                    continue
                prev[j] = i
                if j == dst:
                    path = [j]
                    while path[-1] != src:
                        path.append(prev[path[-1]])
                    return path[::-1]
                nxt.append(j)
        queue = nxt
    return None


def _root_path(parent: dict[int, tuple[int, int]], node: int) -> list[int]:
    path = [node]
    while path[-1] in parent:
        path.append(parent[path[-1]][0])
    return path


def _demote_nonring_aromatics(mol: Molecule) -> None:
    """Clean up aromatic markings that cannot be part of an aromatic ring.

    A bare bond between two lowercase atoms defaults to aromatic during
    parsing; when such a bond is not a ring bond (biphenyl linkage) it is
    really a single bond.  Lowercase atoms outside any ring are demoted to
    their aliphatic element.
    """
    for bi, bond in enumerate(mol.bonds):
        if bond.order == "aromatic" and bi not in mol._ring_bonds:
            bond.order = "single"
    for atom in mol.atoms:
        if atom.aromatic and atom.index not in mol._ring_atoms:
            atom.aromatic = False


def _assign_implicit_h(mol: Molecule) -> None:
    for atom in mol.atoms:
        if atom.bracket:
            atom.implicit_h = 0  # bracket atoms carry explicit counts only
            continue
        valences = DEFAULT_VALENCES.get(atom.element)
        if valences is None:
            atom.implicit_h = 0
            continue
        if atom.aromatic:
            # degree + 1 accounts for the delocalized pi contribution
            used = mol.degree(atom.index) + 1
            atom.implicit_h = max(0, min(v - used for v in valences if v >= used)
                                  if any(v >= used for v in valences) else 0)
            continue
        order_sum = mol.bond_order_sum(atom.index)
        needed = int(order_sum + 0.999999)  # aromatic halves round up
        fitting = [v for v in valences if v >= needed]
        atom.implicit_h = (fitting[0] - needed) if fitting else 0


def _check_valences(mol: Molecule) -> None:
    for atom in mol.atoms:
        if atom.bracket or atom.element not in DEFAULT_VALENCES:
            # Bracket atoms declare their own hydrogen count; no charge
            # accounting is attempted for them.
            continue
        max_val = max(DEFAULT_VALENCES[atom.element])
        if atom.aromatic:
            if mol.degree(atom.index) > max_val:
                raise ValenceError(
                    f"aromatic {atom.element} with {mol.degree(atom.index)} "
                    f"connections exceeds valence {max_val}")
            continue
        order_sum = mol.bond_order_sum(atom.index)
        if order_sum > max_val + 1e-9:
            raise ValenceError(
                f"{atom.element} with explicit valence {order_sum:g} "
                f"exceeds maximum {max_val} (in {mol.source!r})")


_SP2_CAPABLE = {"C", "N", "O", "S"}


def _aromatize_kekule(mol: Molecule) -> None:
    """Mark 4n+2 Kekule rings aromatic (two passes for fused systems)."""
    for _ in range(2):
        changed = False
        for ring in sorted(mol.rings, key=len):
            if _try_aromatize_ring(mol, ring):
                changed = True
        if not changed:
            break
    # Invariant: aromatic bonds connect two aromatic atoms.
    for bond in mol.bonds:
        if bond.order == "aromatic":
            if not (mol.atoms[bond.a].aromatic and mol.atoms[bond.b].aromatic):
                raise SmilesError(
                    f"aromatic bond between non-aromatic atoms in {mol.source!r}")


def _try_aromatize_ring(mol: Molecule, ring: tuple[int, ...]) -> bool:
    ring_set = set(ring)
    ring_bonds = []
    for k in range(len(ring)):
        bi = _bond_between(mol, ring[k], ring[(k + 1) % len(ring)])
        if bi is None:
            return False
        ring_bonds.append(bi)
    if all(mol.bonds[bi].order == "aromatic" for bi in ring_bonds):
        return False  # already aromatic
    pi = 0
    for idx in ring:
        atom = mol.atoms[idx]
        if atom.element not in _SP2_CAPABLE or atom.formal_charge != 0:
            return False
        doubles = [b for _, bi in mol._adj[idx]
                   if (b := mol.bonds[bi]).order == "double"]
        triples = any(mol.bonds[bi].order == "triple" for _, bi in mol._adj[idx])
        if triples or len(doubles) > 1:
            return False
        if atom.aromatic:
            pi += 1
        elif doubles:
            partner = doubles[0].other(idx)
            if partner in ring_set:
                pi += 1  # endocyclic double bond
            elif mol.atom_in_ring(partner):
                pi += 1  # exocyclic into a fused ring partner
            else:
                pi += 0  # exocyclic carbonyl-style double: sp2 but no pi here
        else:
            # No double bond: only heteroatoms donate a lone pair.
            if atom.element in ("N", "O", "S"):
                pi += 2
            else:
                return False
    if pi % 4 != 2:
        return False
    for idx in ring:
        mol.atoms[idx].aromatic = True
    for bi in ring_bonds:
        mol.bonds[bi].order = "aromatic"
    return True


# ---------------------------------------------------------------------------
# Graph rebuilding (subgraphs, scaffolds)
# ---------------------------------------------------------------------------


def from_graph(atoms: list[Atom], bonds: list[Bond], source: str = "") -> Molecule:
    """Build a Molecule from pre-assembled atoms and bonds.

    Atom indices must match list positions.  Implicit hydrogens of bare
    atoms are rederived for the new bonding environment; bracket atoms keep
    their declared counts.
    """
    mol = Molecule(atoms, bonds, source=source)
    _finalize(mol, trust_h_counts=True)
    return mol


def _subgraph(mol: Molecule, keep: list[int]) -> Molecule:
    index_map = {old: new for new, old in enumerate(keep)}
    atoms = []
    for old in keep:
        a = mol.atoms[old]
        atoms.append(Atom(a.element, a.formal_charge, a.aromatic, a.explicit_h,
                          a.isotope, index_map[old], a.bracket, a.chirality))
    bonds = []
    for bond in mol.bonds:
        if bond.a in index_map and bond.b in index_map:
            order = "double" if bond.order == "aromatic" else bond.order
            # Aromatic orders are restated below by reperception; starting
            # from doubles would corrupt pi counting, so keep aromatic bonds
            # aromatic when both endpoints stay aromatic.
            if bond.order == "aromatic":
                order = "aromatic"
            bonds.append(Bond(index_map[bond.a], index_map[bond.b], order, bond.stereo))
    return from_graph(atoms, bonds, source=mol.source)


def murcko_scaffold(mol: Molecule) -> Molecule:
    """Ring-and-linker framework: terminal atoms pruned until none remain.

    Exocyclic substituents -- including double-bonded terminal atoms -- count
    as side chains and are removed.  A molecule without rings prunes down to
    the empty scaffold.
    """
    alive = [True] * len(mol.atoms)
    degree = [mol.degree(i) for i in range(len(mol.atoms))]
    changed = True
    while changed:
        changed = False
        for i in range(len(mol.atoms)):
            if alive[i] and degree[i] <= 1 and not mol.atom_in_ring(i):
                alive[i] = False
                changed = True
                for j, _ in mol._adj[i]:
                    if alive[j]:
                        degree[j] -= 1
    keep = [i for i in range(len(mol.atoms)) if alive[i]]
    return _subgraph(mol, keep)


# ---------------------------------------------------------------------------
# Canonical keys
# ---------------------------------------------------------------------------

EMPTY_SCAFFOLD_KEY = "scaffold:acyclic"


def molecule_key(mol: Molecule) -> str:
    """Order-invariant structural key (Weisfeiler-Lehman style refinement).

    Isomorphic graphs always map to the same key; the converse holds for
    anything this package meets in practice.  Stereochemistry is ignored.
    """
    n = len(mol.atoms)
    if n == 0:
        return EMPTY_SCAFFOLD_KEY
    labels = [
        f"{a.element}|{int(a.aromatic)}|{a.formal_charge}|{a.total_h}|{mol.degree(a.index)}"
        for a in mol.atoms
    ]
    labels = [_h(s) for s in labels]
    for _ in range(max(2, min(n, 16))):
        nxt = []
        for i in range(n):
            env = sorted(f"{mol.bonds[bi].order[0]}{labels[j]}" for j, bi in mol._adj[i])
            nxt.append(_h(labels[i] + "".join(env)))
        if nxt == labels:
            break
        labels = nxt
    edge_codes = sorted(
        "".join(sorted((labels[b.a], labels[b.b]))) + b.order[0] for b in mol.bonds
    )
    return _h("".join(sorted(labels)) + "|" + "".join(edge_codes))


def scaffold_key(mol: Molecule) -> str:
    """Canonical key of the molecule's ring-and-linker framework.

    Applying it to an already-extracted scaffold is a no-op (the framework
    of a framework is itself); acyclic input maps to the shared sentinel.
    """
    scaffold = murcko_scaffold(mol)
    if len(scaffold) == 0:
        return EMPTY_SCAFFOLD_KEY
    return molecule_key(scaffold)


def _h(s: str) -> str:
    return hashlib.blake2s(s.encode(), digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# Writing (non-canonical; used for permutation tests and debugging)
# ---------------------------------------------------------------------------


def write_smiles(mol: Molecule, rng=None, root: int | None = None) -> str:
    """Emit SMILES for the graph, optionally with randomized traversal.

    The output is valid but not canonical: passing a seeded ``rng``
    (numpy Generator) shuffles branch order and the starting atom, which is
    exactly what the atom-permutation invariance tests need.
    """
    if len(mol.atoms) == 0:
        return ""
    order = list(range(len(mol.atoms)))
    if rng is not None:
        rng.shuffle(order)
    if root is not None:
        order.remove(root)
        order.insert(0, root)

    visited = [False] * len(mol.atoms)
    ring_labels: dict[tuple[int, int], int] = {}
    label_busy: dict[int, bool] = {}
    pieces: list[str] = []

    def free_label() -> int:
        k = 1
        while label_busy.get(k):
            k += 1
        label_busy[k] = True
        return k

    def bond_char(bond: Bond, from_arom: bool, to_arom: bool) -> str:
        if bond.order == "single":
            return "-" if (from_arom and to_arom) else ""
        if bond.order == "aromatic":
            return ""
        return {"double": "=", "triple": "#"}[bond.order]

    def atom_token(atom: Atom) -> str:
        sym = atom.element
        lower = sym.lower() if atom.aromatic else sym
        if atom.aromatic and sym not in AROMATIC_ELEMENTS:
            raise SmilesError(f"cannot write aromatic {sym}")
        needs_bracket = (atom.bracket or atom.formal_charge != 0
                         or atom.isotope is not None
                         or sym not in ORGANIC_SUBSET)
        if not needs_bracket:
            # Would a bare token rederive the right hydrogen count?
            if atom.aromatic:
                used = mol.degree(atom.index) + 1
                valences = DEFAULT_VALENCES[sym]
                derived = max(0, min((v - used for v in valences if v >= used),
                                     default=0))
            else:
                order_sum = mol.bond_order_sum(atom.index)
                needed = int(order_sum + 0.999999)
                fitting = [v for v in DEFAULT_VALENCES[sym] if v >= needed]
                derived = (fitting[0] - needed) if fitting else 0
            if derived != atom.total_h:
                needs_bracket = True
        if not needs_bracket:
            return lower
        parts = ["["]
        if atom.isotope is not None:
            parts.append(str(atom.isotope))
        parts.append(lower if atom.aromatic else sym)
        h = atom.total_h
        if h == 1:
            parts.append("H")
        elif h > 1:
            parts.append(f"H{h}")
        c = atom.formal_charge
        if c == 1:
            parts.append("+")
        elif c == -1:
            parts.append("-")
        elif c > 1:
            parts.append(f"+{c}")
        elif c < -1:
            parts.append(f"-{-c}")
        parts.append("]")
        return "".join(parts)

    # Pre-pass: find ring-closure bonds via DFS tree
    closure_bonds: set[int] = set()
    tree_children: dict[int, list[tuple[int, int]]] = {}
    for start in order:
        if visited[start]:
            continue
        stack = [(start, -1)]
        visited[start] = True
        while stack:
            node, via = stack.pop()
            nbrs = [(j, bi) for j, bi in mol._adj[node] if bi != via]
            if rng is not None:
                idx = list(range(len(nbrs)))
                rng.shuffle(idx)
                nbrs = [nbrs[k] for k in idx]
            for j, bi in nbrs:
                if visited[j]:
                    if bi not in closure_bonds and bi != via:
                        closure_bonds.add(bi)
                else:
                    visited[j] = True
                    tree_children.setdefault(node, []).append((j, bi))
                    stack.append((j, bi))

    # The DFS above fixed the spanning structure; emit it recursively.
    emitted = [False] * len(mol.atoms)
    closures_at: dict[int, list[int]] = {}
    for bi in closure_bonds:
        closures_at.setdefault(mol.bonds[bi].a, []).append(bi)
        closures_at.setdefault(mol.bonds[bi].b, []).append(bi)
    open_closures: dict[int, int] = {}  # bond index -> label

    def emit(node: int) -> None:
        atom = mol.atoms[node]
        pieces.append(atom_token(atom))
        emitted[node] = True
        for bi in closures_at.get(node, ()):  # ring closure digits
            bond = mol.bonds[bi]
            if bi in open_closures:
                label = open_closures.pop(bi)
                label_busy[label] = False
                other = bond.other(node)
                pieces.append(bond_char(bond, mol.atoms[other].aromatic, atom.aromatic))
                pieces.append(str(label) if label < 10 else f"%{label:02d}")
            else:
                label = free_label()
                open_closures[bi] = label
                other = bond.other(node)
                pieces.append(bond_char(bond, atom.aromatic, mol.atoms[other].aromatic))
                pieces.append(str(label) if label < 10 else f"%{label:02d}")
        children = tree_children.get(node, [])
        for k, (child, bi) in enumerate(children):
            bond = mol.bonds[bi]
            bc = bond_char(bond, atom.aromatic, mol.atoms[child].aromatic)
            if k < len(children) - 1:
                pieces.append("(")
                pieces.append(bc)
                emit(child)
                pieces.append(")")
            else:
                pieces.append(bc)
                emit(child)

    first = True
    for start in order:
        if emitted[start]:
            continue
        if not first:
            pieces.append(".")
        first = False
        emit(start)
    return "".join(pieces)
