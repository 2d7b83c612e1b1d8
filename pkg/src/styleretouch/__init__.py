"""Reference-based color/tone retouching with a style auto-encoder and retrieval."""

__version__ = "0.1.0"
