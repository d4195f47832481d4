"""Adiabatic Bloch-band toolkit: band geometry, magnetic spectra, semiclassical dynamics and pumping."""

__version__ = "0.1.0"
