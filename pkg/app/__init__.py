# Anisotropic adaptive P1 finite element toolkit

__version__ = "1.0.0"
