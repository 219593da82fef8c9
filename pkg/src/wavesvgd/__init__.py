"""Bayesian full-waveform inversion of 1D wave speeds with Stein variational methods."""
__version__ = "0.1.0"
