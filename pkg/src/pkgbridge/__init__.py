"""Binary repository planning for R packages and a bridge to the system package manager."""

__version__ = "0.1.0"
