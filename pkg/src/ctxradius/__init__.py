"""Context-aware multi-factor authentication over a RADIUS-style wire protocol."""

__version__ = "0.1.0"
