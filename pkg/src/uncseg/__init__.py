"""Uncertainty-aware volumetric tumor segmentation."""
