"""Turn weak annotations into pseudo labels with a promptable segmenter."""

__version__ = "0.1.0"
