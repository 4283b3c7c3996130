"""Forecast each editor's next-5-month edit count from edit history."""

__version__ = "0.1.0"
