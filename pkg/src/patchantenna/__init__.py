"""Spontaneous-emission control by plasmonic patch antennas."""

__version__ = "0.1.0"
