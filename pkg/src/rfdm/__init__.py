"""Synthetic FMCW gesture-radar toolkit.

Pipeline: parametric gesture scenes -> raw IF data cubes -> range/Doppler/MTI
preprocessing -> RFDM sequences -> CNN-TCN classification and evaluation.
"""

__version__ = "0.1.0"
