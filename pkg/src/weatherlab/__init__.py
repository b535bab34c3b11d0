"""Weather-augmentation dataset pipeline and per-condition detection evaluation harness."""

__version__ = "0.1.0"
