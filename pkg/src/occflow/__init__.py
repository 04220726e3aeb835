"""Occupancy flow field prediction from fused raster and vector scene encodings."""

__version__ = "0.1.0"
