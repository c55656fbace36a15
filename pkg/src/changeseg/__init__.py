"""Weakly-supervised change segmentation toolkit.

Pipeline: stack pre/post multi-band rasters, expand a handful of analyst
seed pixels into dense labels via PCA + Mahalanobis confidence regions,
train a small ViT encoder-decoder on the expanded labels, evaluate
full-scene predictions against a reference mask.
"""

__version__ = "0.1.0"
