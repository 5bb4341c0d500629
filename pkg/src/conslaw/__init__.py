"""Discovery, certification and numerical verification of conservation laws
of gradient and momentum training flows."""

__version__ = "0.1.0"
