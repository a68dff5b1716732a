"""Numerical laboratory for trapped solitons of the 1-D generalized NLS.

Builds ground states in an external trapping potential, analyzes the
non-self-adjoint linearized operator (discrete spectrum, biorthogonal
spectral projections), constructs Jost solutions and continuum modes
with their threshold-resonance and unitarity structure, assembles the
essential-spectrum propagator with its weighted dispersive estimates,
and runs the full nonlinear modulation dynamics that exhibit asymptotic
stability of the trapped soliton at desk scale.
"""

__version__ = "0.1.0"
