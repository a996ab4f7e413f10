"""Cross-modal distillation with a trainable aligner between a frozen teacher and a student."""

__version__ = "0.1.0"
