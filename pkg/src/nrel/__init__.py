"""Neuro-relational programs: rules over relations whose tuples carry embeddings."""

from __future__ import annotations

from .errors import NrelError
from .relmodel import Database, EmbeddedRelation, load_relation_csv
from .tensor import ParameterStore, Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Database", "EmbeddedRelation", "NrelError", "ParameterStore", "Tape", "Tensor",
           "load_relation_csv", "__version__"]
