"""Active identification of mass distributions of pushed articulated chains."""

__version__ = "0.1.0"
