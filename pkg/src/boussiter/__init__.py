"""Compactly supported weak solutions of the 2-D Boussinesq system.

The package builds quintuples (v, theta, p, R, f) — velocity, temperature,
pressure, and the two defect fields closing the momentum and temperature
equations — and iteratively shrinks the defects by adding high-frequency
plane-wave corrections.  See README.md for the command line and file formats.
"""

__version__ = "0.1.0"
