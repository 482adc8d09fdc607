"""Two-modality image classification with early, late and MMTM fusion."""

__version__ = "0.1.0"
