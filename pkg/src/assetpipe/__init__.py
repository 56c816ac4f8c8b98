"""Physical-asset extraction, cleaning and validation for regulatory filings."""

__version__ = "0.1.0"
