"""Spontaneous vs posed smile classification from 3D facial landmark sequences."""

__version__ = "0.1.0"
