"""Multi-modal graph-attention recommender for NFT collections."""

__version__ = "0.1.0"
