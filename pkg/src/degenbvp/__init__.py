"""Solver and verification toolkit for degenerate elliptic boundary value problems
whose degeneracy factor changes sign across an interior curve."""

__version__ = "0.1.0"
