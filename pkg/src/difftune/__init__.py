"""difftune: pretrain a toy diffusion policy on a 2D navigation task and
fine-tune it from pairwise trajectory preferences, robustly under label
corruption."""

__version__ = "0.1.0"
