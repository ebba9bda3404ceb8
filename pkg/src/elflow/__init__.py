"""Numerical laboratory for non-isothermal incompressible nematic liquid-crystal flow.

Subpackages:
    thermo          pointwise constitutive / thermodynamic closures and stresses
    grid            finite-difference fields, operators, Helmholtz projection
    simulator       time integration of the coupled (u, theta, d) system
    linear_analysis frozen-coefficient symbol algebra and equilibrium spectra
    config / cli    experiment configuration and command-line entry points
"""

__version__ = "0.1.0"
