"""Desk-scale LoS blockage prediction lab for mmWave vehicular links."""

__version__ = "0.1.0"
