from .scene import Material, TripletScene, VertexProps, assemble_triplets, validate
from .lighting import DirectionalLight, EnvironmentShLight, LightRig, PointLight, VertexShLight
from .rasterizer import FragmentBuffer, Renderer, render, render_backward, raycast_reference
from .optim import GradStats, Optimizer, ParamGroup, grad_check
from .density import adapt_connected_density, clone_face, densify_and_prune, split_face_loop
from .remesh import loop_subdivide, mesh_report, qem_simplify
from .extraction import extract_mesh, ring_filter_materials, transfer_properties

__all__ = [
    "Material",
    "TripletScene",
    "VertexProps",
    "assemble_triplets",
    "validate",
    "DirectionalLight",
    "EnvironmentShLight",
    "LightRig",
    "PointLight",
    "VertexShLight",
    "FragmentBuffer",
    "Renderer",
    "render",
    "render_backward",
    "raycast_reference",
    "GradStats",
    "Optimizer",
    "ParamGroup",
    "grad_check",
    "adapt_connected_density",
    "clone_face",
    "densify_and_prune",
    "split_face_loop",
    "loop_subdivide",
    "mesh_report",
    "qem_simplify",
    "extract_mesh",
    "ring_filter_materials",
    "transfer_properties",
]
