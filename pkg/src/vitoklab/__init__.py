"""Desk-scale ViT tokenizer laboratory."""

__version__ = "0.1.0"
