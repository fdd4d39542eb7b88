"""primelab: subtokenizers, masked-diffusion kernels and exact loss oracles."""
from .backend import NAME as BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
