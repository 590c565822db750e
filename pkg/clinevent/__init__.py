"""Clinical event extraction with a temporal convolutional network."""

__version__ = "1.0.0"
