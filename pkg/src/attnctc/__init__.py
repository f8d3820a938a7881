"""Character-level CTC with windowed attention variants, on a small
hand-rolled autodiff core. See README.md for the ablation ladder and CLI."""

__version__ = "0.1.0"
