"""EATFormer-style vision transformer backbone, trainer and verification suite."""

__version__ = "0.1.0"
