"""Video moment localisation with cross-modal interaction, frame-by-word
attention and an internal-frame auxiliary head, on a small numpy autodiff."""

__version__ = "0.1.0"
