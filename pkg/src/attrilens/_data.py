"""Bundled-data resolution.

Data files ship inside the package; setting ``ATTRILENS_DATA_DIR`` points
every consumer (range tables, fixture corpora, benchmark CSVs) at an
external directory instead, which is how deployments swap in their own
calibrated tables without touching the install.
"""

from __future__ import annotations

import os
from pathlib import Path

_PACKAGE_DATA = Path(__file__).parent / "data"

ENV_VAR = "ATTRILENS_DATA_DIR"

# Named, pre-calibrated range tables; the name encodes which assistant's
# range suggestions seeded the calibration.
BUNDLED_RANGE_TABLES = {
    "gpt4o-default": "ranges_gpt4o_default.tsv",
    "r1-default": "ranges_r1_default.tsv",
}


def data_dir() -> Path:
    override = os.environ.get(ENV_VAR)
    if override:
        return Path(override)
    return _PACKAGE_DATA


def data_path(name: str) -> Path:
    return data_dir() / name


def resolve_range_table(spec: str) -> Path:
    """Map a table name or filesystem path to a concrete file."""
    if spec in BUNDLED_RANGE_TABLES:
        return data_path(BUNDLED_RANGE_TABLES[spec])
    return Path(spec)
