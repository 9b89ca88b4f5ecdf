"""Validation: cell validators applied during CSV ingestion."""

from .cell_validations import CountValidator, RealValidator, Validator

__all__ = [
    "Validator",
    "RealValidator",
    "CountValidator",
]
