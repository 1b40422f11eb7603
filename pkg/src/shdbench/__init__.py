"""Benchmark workbench for multi-label structural heart disease detection from 12-lead ECGs."""

__version__ = "0.1.0"
