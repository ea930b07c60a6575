from .mesh import (
    MeshError,
    SurfaceSamples,
    TriangleMesh,
    box_mesh,
    cube_mesh_minimal,
    cylinder_mesh,
    icosphere,
    load_mesh,
    sample_surface_grid,
    sample_surface_random,
    save_obj,
    uv_sphere,
)
from .query import (
    DistanceResult,
    first_hit,
    contains,
    mesh_distance,
    mesh_intersects,
    query_distance,
    raycast,
    signed_distance,
    unsigned_distance,
    winding_number,
)
from .transforms import Pose, axis_angle_to_matrix, is_rotation, look_at, rot_x, rot_y, rot_z, rotvec_to_matrix
from .volume import CameraModel, GridSpec, VoxelVolume, integrate_tsdf, render_depth

__all__ = [
    "CameraModel", "DistanceResult", "GridSpec", "MeshError", "Pose", "SurfaceSamples",
    "TriangleMesh", "VoxelVolume", "axis_angle_to_matrix", "box_mesh", "contains",
    "cube_mesh_minimal", "cylinder_mesh", "first_hit", "icosphere", "integrate_tsdf", "is_rotation",
    "load_mesh", "look_at", "mesh_distance", "mesh_intersects", "query_distance", "raycast",
    "render_depth", "rot_x", "rot_y", "rot_z", "rotvec_to_matrix", "sample_surface_grid",
    "sample_surface_random", "save_obj", "signed_distance", "unsigned_distance", "uv_sphere",
    "winding_number",
]
