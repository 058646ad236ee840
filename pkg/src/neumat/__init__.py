"""Neural BRDFs compressed by a set autoencoder and rectified in the spherical-harmonic domain."""

__version__ = "0.1.0"
