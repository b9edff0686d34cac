"""fracback: forward subdiffusion solver (P1 FEM + backward Euler
convolution quadrature) and quasi-boundary-value reconstruction of the
initial state from noisy terminal observations."""

__version__ = "0.1.0"
