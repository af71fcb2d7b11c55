"""Product extraction, classification, transfer evaluation and taxonomy mapping."""

__version__ = "0.1.0"
