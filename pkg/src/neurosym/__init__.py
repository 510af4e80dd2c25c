"""Weakly-supervised handwritten-formula recognition.

A perception network maps per-symbol feature vectors to symbol
distributions; a context-free grammar constrains decoding to valid
formulas; an exact rational calculator executes them; and a back-search
sampler corrects wrong predictions into pseudo labels for training.
"""
from ._kernels import BACKEND as kernel_backend

__all__ = ["kernel_backend"]
__version__ = "0.1.0"
