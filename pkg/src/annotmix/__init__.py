"""Multi-annotator classification with triple mixup (annot-mix)."""

__version__ = "0.1.0"
