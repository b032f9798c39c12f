"""Disordered magnetic tight-binding models on Z^d and their topological
invariants: momentum-space, real-space, and boundary formulations, with
Fredholm index, Streda/gap-labelling, and charge-pump cross-checks."""

from . import (
    catalog,
    clifford,
    errors,
    invariants,
    model,
    pump,
    spectral,
    streda_gaplabel,
)

__version__ = "0.1.0"
