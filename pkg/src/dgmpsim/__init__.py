"""Distributed grid matching pursuit channel estimation for wideband hybrid mmWave MIMO."""

__version__ = "0.1.0"
