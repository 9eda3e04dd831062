"""Two-party private record linkage with DP-noised blocking."""

__version__ = "0.1.0"
