"""Desk-scale solver for the reduced vacuum equations of a polarized
axisymmetric black-hole interior, marching toward the spacelike singularity."""

__version__ = "0.1.0"
