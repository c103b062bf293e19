"""Staged sketch -> palette -> image bridge-diffusion pipeline on a toy
procedural dataset, with an interactive fixed-noise editing session API.
"""

__version__ = "0.1.0"
