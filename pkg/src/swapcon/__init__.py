"""Contrastive swap-augmentation pretraining for tabular intrusion detection."""

__version__ = "0.1.0"
