"""Hidden-state extractor: dumps all-layer activations of pretrained text
encoders to TEDH files keyed by text hash."""

__version__ = "0.1.0"
