"""Time-domain collocation BEM for the acoustic wave equation.

Generalized convolution quadrature (Runge-Kutta based) in time, low order
collocation in space, and frequency-adaptive 3D cross approximation of the
stacked Laplace-domain system matrices with H-matrix (ACA) or Chebyshev
FMM faces.
"""

__version__ = "0.1.0"
