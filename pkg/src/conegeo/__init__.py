"""Numerical geodesics in the space of Kähler cone metrics.

The package solves the continuity family of regularized complex
Monge-Ampère Dirichlet problems on a product ``X x [0, 1]`` (flat torus or
a football sphere with two cone points), extracts the degenerate limit as a
geodesic of potentials, and checks the barrier, comparison and metric-space
inequalities that go with it.
"""

from conegeo.cone_geometry import ConeStructure, GeometryDescriptor
from conegeo.grid import Field, ReducedGrid, make_grid

__all__ = ["ConeStructure", "GeometryDescriptor", "Field", "ReducedGrid", "make_grid"]
__version__ = "0.1.0"
