"""Ultraweak DPG for 2D time-harmonic acoustics with multigrid-preconditioned CG."""
from .kernels import BACKEND
from .mesh import AdaptiveMesh, uniform_mesh
from .system import PlaneWave, Problem, build_system

__version__ = "0.1.0"

__all__ = ["AdaptiveMesh", "BACKEND", "PlaneWave", "Problem", "build_system", "uniform_mesh"]
