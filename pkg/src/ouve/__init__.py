"""OUVE diffusion engine for speech enhancement and dereverberation."""

__version__ = "0.1.0"
