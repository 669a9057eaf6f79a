"""Exports reference SqueezeNet v1.0 weights into the engine's TIWF format,
calibrates activation ranges, and dumps golden fixtures for its test suite.

Talks to the engine only through files (TIWF / TIRAW / TIF32 / manifest)
and its CLI; the engine package is never imported here.
"""

from .export import export_weights, make_fixtures
from .images import load_image_file, preprocess, synthetic_image_set
from .model import load_reference, layer_arrays, v10_weight_shapes
from .tiwf import ExportError, encode_tiwf, write_tiwf

__version__ = "0.1.0"
