"""Data-driven topology design for pi-type EMI filter conductor layouts."""

__version__ = "0.1.0"
