"""Learning-to-rank satisfaction scores from text with a group-wise GNN."""

__version__ = "0.1.0"
