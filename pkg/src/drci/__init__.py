"""Siamese tracker trained with a contrastive loss over template instances."""

__version__ = "0.1.0"
