"""Ensemble clustering with consensus selection and temporal stability analysis."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    UNK,
    NOISE,
    ColumnSchema,
    DataTable,
    Partition,
    SyntheticSpec,
    generate_synthetic,
    load_table,
    validate_schema,
    write_table,
)
