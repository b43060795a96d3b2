"""Schrödinger semigroups, critical radii and vector-valued square functions on grids."""
