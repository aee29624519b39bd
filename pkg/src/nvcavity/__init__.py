"""Numerical toolkit for cavity-enhanced NV-centre spin-photon interfaces."""

__version__ = "0.1.0"
