"""Fingerprint super-resolution with jointly trained pore detection.

Subpackages cover synthetic data generation, the four networks (SR
generator, conditional quality discriminator with identity-feature fusion,
Siamese verifier, residual pore detector), the five-term training
objective, pore detection scoring (TDR/FDR), and multi-level match-score
fusion with EER/ROC evaluation.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
