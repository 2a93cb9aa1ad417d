"""Agentic orchestration for automated finite-element code generation."""

__version__ = "0.1.0"
