"""Robust a posteriori error estimation for reaction-diffusion problems.

P1 finite elements for -div grad u + kappa^2 u = f on polygonal domains with
homogeneous Dirichlet conditions, plus a vertex-based error estimator whose
data oscillation is priced in dual norms and therefore dominated by the
error itself, uniformly in kappa.

Submodules load lazily; `import rdafem` stays cheap so the command line can
configure threading before any numerics come in.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("adapt", "cli", "dual_system", "estimator", "galerkin", "mesh",
               "quadrature", "verify")


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module("." + name, __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES))
