"""Composable Pufferfish mechanisms from (a, b)-influence curves."""

__version__ = "0.1.0"
