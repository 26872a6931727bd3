"""Proximal independence Metropolis-Hastings for inverse problems with approximate forward operators.

Submodules: ``linalg``, ``densities``, ``posteriors``, ``proximal``,
``samplers``, ``theory``, ``helmholtz``, ``diagnostics``, ``config``,
``experiments``, ``oracles``, ``cli``. The package root stays import-light so
the CLI can fix BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
