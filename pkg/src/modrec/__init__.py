"""Multi-modal sequential recommendation with joint item transformers and
online mutual distillation across ID, text, and image branches."""

__version__ = "0.1.0"
