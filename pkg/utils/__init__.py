"""Utility modules for tabbin: checkpoints, reports and synthetic data."""
