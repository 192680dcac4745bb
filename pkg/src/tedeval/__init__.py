"""Text-encoder evaluation harness: layer fusion, context aggregation,
contrastive training, benchmark scoring, and a toy conditional denoiser."""

__version__ = "0.1.0"
