"""Masked attention regularization for remote photoplethysmography.

Subpackages: ``numerics`` (autodiff, optimizer, checkpoints), plus the
model, losses, training loop, signal processing, metrics, data formats
and the ``marppg`` command line.
"""

__version__ = "0.1.0"
