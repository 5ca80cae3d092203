"""Shooting-and-bouncing-rays propagation with iterative sub-cone refinement."""

from .geometry import RayCone, SpherePoint
from .launcher import LaunchGrid, Scheme, make_grid
from .scene import Material, Scene, load_scene, make_corner, make_outdoor_blocks, make_shoebox
from .tracer import PropagationPath, TraceConfig, trace_candidates, trace_sbr
from .refiner import RefineConfig, RefinementTrace, refine_path, refine_paths
from .image_oracle import im_paths

__version__ = "0.1.0"

__all__ = [
    "LaunchGrid",
    "Material",
    "PropagationPath",
    "RayCone",
    "RefineConfig",
    "RefinementTrace",
    "Scene",
    "Scheme",
    "SpherePoint",
    "TraceConfig",
    "im_paths",
    "load_scene",
    "make_corner",
    "make_grid",
    "make_outdoor_blocks",
    "make_shoebox",
    "refine_path",
    "refine_paths",
    "trace_candidates",
    "trace_sbr",
]
