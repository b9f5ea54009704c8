"""Acoustic-to-articulatory inversion toolkit.

Learns the mapping from fixed-rate acoustic or pretrained speech features
to 12-channel articulator trajectories with single-head transformer
regressors, and evaluates it with per-articulator Pearson correlations.
"""

__version__ = "0.1.0"
