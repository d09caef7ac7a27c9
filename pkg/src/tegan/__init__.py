"""Image-to-image translation with explicitly encoded transitions."""

__version__ = "0.1.0"
