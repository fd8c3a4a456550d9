"""Offline dependency-path annotation for pre-tokenized relation corpora."""

from .annotate import SchemaError, annotate_file, annotate_record, validate_record
from .parser import Parse, dependency_path, parse, span_head, tree_path

__version__ = "0.1.0"
