"""Desk-scale speech recognition training stack.

Self-supervised pre-training over quantized speech targets, a conformer
encoder with configurable attention footprint, CTC fine-tuning, paired
text injection, residual adapters, and pseudo-label self-training, all
on a numpy reverse-mode autodiff core small enough to read in a sitting.
"""

__version__ = "0.1.0"
