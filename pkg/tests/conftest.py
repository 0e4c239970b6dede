"""Shared fixtures: bundled data paths and a SMILES corpus for
property-based tests."""

import pytest

from attrilens._data import data_path
from attrilens.rewards import load_range_table

# A spread of valid structures: acyclic, aromatic, fused, charged,
# multi-fragment, heteroatom-rich. Used for permutation/round-trip
# property tests.
SMILES_CORPUS = [
    "C",
    "O",
    "CCO",
    "CC(C)=O",
    "c1ccccc1",
    "Cc1ccccc1",
    "c1ccc2ccccc2c1",
    "C1CCCCC1",
    "C1CC1",
    "OC(=O)c1ccccc1OC(C)=O",          # aspirin
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",     # caffeine
    "CN1CCC[C@H]1c1cccnc1",           # nicotine
    "NCCc1ccc(O)c(O)c1",              # dopamine
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",     # ibuprofen
    "C(F)(F)F",
    "[NH4+]",
    "[O-]C(=O)C",
    "CCO.CC",
    "O=C=O",
    "C1=CC=CC=C1",                    # Kekulé benzene
    "c1ccsc1",
    "c1ccoc1",
    "c1ccncc1",
    "CN(C(=O)Cc1ccc(Cl)c(Cl)c1)C1CCCC[C@H]1N1CCCC1",
    "Nc1nc2ccccc2cc1CCC(=O)NCC1CCCCC1",
    "C%10CCCCC%10",
    "S(=O)(=O)(N)c1ccccc1",
    "BrCCCl",
    "ICI",
]


@pytest.fixture(scope="session")
def default_table():
    return load_range_table("gpt4o-default")


@pytest.fixture(scope="session")
def alt_table():
    return load_range_table("r1-default")


@pytest.fixture(scope="session")
def fixtures_path():
    return data_path("case_studies.jsonl")
