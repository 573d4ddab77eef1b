"""Figure rendering for iterlearn metrics CSVs."""

__version__ = "0.1.0"
