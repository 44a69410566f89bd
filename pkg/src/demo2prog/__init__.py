"""Programs from demonstrations: infer low-level controllers from a recorded
arm motion, turn them into symbols, compress the symbol trace into a small
program with loops and palindromes, and ground the symbols in images so the
program can run in rearranged scenes.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
