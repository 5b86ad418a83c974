"""Differential-algebra engine and verification suite for the mixed heavenly
and Husain two-component systems."""

__version__ = "0.1.0"
