"""Consumer-surplus evaluation of pricing policies from logged purchase data."""

__version__ = "0.1.0"
