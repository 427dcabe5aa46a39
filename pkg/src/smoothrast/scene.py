"""Mesh, camera and pose representation, projection, and 2D geometry kernels.

Everything here is deterministic geometry: loading meshes, posing them,
projecting triangles to normalized device coordinates (NDC), and measuring
signed pixel-to-triangle distances.  Distances are measured in NDC units so
smoothing scales are resolution independent.  The sign convention is positive
inside a triangle and negative outside, so that a step function of the
distance yields the classical occupancy map.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

# Signed distance reported for zero-area (degenerate) projected triangles.
# A most-negative value guarantees zero occupancy under any smoothing.
DEGENERATE_DISTANCE = -np.inf

_DISTANCE_GRAD_EPS = 1e-12


class ObjParseError(ValueError):
    """Raised for malformed Wavefront OBJ input, with a line number."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with per-face flat colors and vertex adjacency.

    Use :meth:`create` rather than the raw constructor; it validates the
    arrays, derives the adjacency structure, and freezes the buffers.
    """

    vertices: np.ndarray     # (V, 3) float64
    faces: np.ndarray        # (F, 3) int64, each row three distinct indices
    face_colors: np.ndarray  # (F, 3) float64 in [0, 1]
    adjacency: tuple         # per-vertex sorted neighbor index arrays

    @classmethod
    def create(cls, vertices, faces, face_colors=None,
               default_color=(0.7, 0.7, 0.7)) -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must have shape (F, 3)")
        nv = len(vertices)
        if faces.size and (faces.min() < 0 or faces.max() >= nv):
            bad = int(np.argmax((faces < 0).any(axis=1) | (faces >= nv).any(axis=1)))
            raise IndexError(f"face {bad} references a vertex outside 0..{nv - 1}")
        if faces.size and (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        ).any():
            raise ValueError("faces must have three distinct vertex indices")

        if face_colors is None:
            face_colors = np.tile(np.asarray(default_color, dtype=np.float64),
                                  (len(faces), 1))
        face_colors = np.ascontiguousarray(face_colors, dtype=np.float64)
        if face_colors.shape != (len(faces), 3):
            raise ValueError("face_colors must have shape (F, 3)")
        if face_colors.size and (face_colors.min() < 0 or face_colors.max() > 1):
            raise ValueError("face colors must lie in [0, 1]")

        neighbors = [set() for _ in range(nv)]
        for i, j, k in faces:
            neighbors[i].update((j, k))
            neighbors[j].update((i, k))
            neighbors[k].update((i, j))
        adjacency = tuple(np.array(sorted(s), dtype=np.int64) for s in neighbors)

        for arr in (vertices, faces, face_colors, *adjacency):
            arr.setflags(write=False)
        return cls(vertices, faces, face_colors, adjacency)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_colors(self, face_colors) -> "Mesh":
        return Mesh.create(self.vertices, self.faces, face_colors)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a vertical field of view, look-at orientation."""

    fov: float = np.deg2rad(60.0)          # vertical field of view, radians
    image_size: tuple = (64, 64)           # (height, width) pixels
    eye: tuple = (0.0, 0.0, 3.0)
    at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    near: float = 0.5
    far: float = 10.0

    def __post_init__(self):
        h, w = self.image_size
        if not (0.0 < self.near < self.far):
            raise ValueError("camera requires 0 < near < far")
        if h < 1 or w < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0.0 < self.fov < np.pi):
            raise ValueError("fov must lie in (0, pi)")

    def frame(self):
        """Right-handed camera axes (right, up, forward) as rows."""
        eye = np.asarray(self.eye, dtype=np.float64)
        fwd = np.asarray(self.at, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd


@dataclass(frozen=True)
class Pose:
    """Rigid pose: axis-angle rotation vector plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3).copy())
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3).copy())
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)


@dataclass(frozen=True)
class ProjectedScene:
    """Per-face projection results feeding the renderer.

    ``verts2d`` holds NDC vertex triples per face; ``z_inv`` the inverse depth
    at each face centroid; ``z_min`` the fixed background inverse depth.
    Faces not fully in front of the near plane are flagged not visible and
    take no part in rendering (no partial clipping is performed).
    """

    verts2d: np.ndarray      # (F, 3, 2) NDC coordinates
    z_inv: np.ndarray        # (F,) inverse centroid depth
    z_min: float
    visible: np.ndarray      # (F,) bool
    centroid_depth: np.ndarray  # (F,) camera-space centroid depth


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_matrix(pose: Pose) -> np.ndarray:
    """Rodrigues rotation matrix from the pose's axis-angle vector."""
    theta = np.asarray(pose.rotation, dtype=np.float64)
    angle = np.linalg.norm(theta)
    K = _skew(theta)
    # sin(a)/a and (1-cos(a))/a^2 via sinc for smoothness through zero.
    s = np.sinc(angle / np.pi)
    half = np.sinc(angle / (2.0 * np.pi))
    c = 0.5 * half * half
    return np.eye(3) + s * K + c * (K @ K)


def rotation_matrix_derivs(pose: Pose) -> np.ndarray:
    """Analytic derivatives of the Rodrigues matrix.

    Returns a (3, 3, 3) array whose slice [i] is dR/d theta_i.  Uses the
    closed form of Gallego & Yezzi; at the identity the derivative reduces to
    the skew generator of each axis.
    """
    theta = np.asarray(pose.rotation, dtype=np.float64)
    n2 = float(theta @ theta)
    out = np.empty((3, 3, 3))
    if n2 < 1e-18:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = _skew(e)
        return out
    R = rotation_matrix(pose)
    K = _skew(theta)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        v = np.cross(theta, (np.eye(3) - R) @ e)
        out[i] = (theta[i] * K + _skew(v)) @ R / n2
    return out


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def apply_pose(mesh: Mesh, pose: Pose) -> np.ndarray:
    """World-space vertex positions R v + t."""
    R = rotation_matrix(pose)
    return mesh.vertices @ R.T + np.asarray(pose.translation)


def project(mesh: Mesh, camera: Camera, pose: Pose) -> ProjectedScene:
    """Perspective-project a posed mesh into NDC.

    Inverse depth is taken once per face at the camera-space centroid; the
    background inverse depth is pinned to 1/far.
    """
    if mesh.num_faces == 0:
        raise ValueError("cannot project an empty mesh")
    world = apply_pose(mesh, pose)
    right, up, fwd = camera.frame()
    rel = world - np.asarray(camera.eye, dtype=np.float64)
    x = rel @ right
    y = rel @ up
    depth = rel @ fwd

    h, w = camera.image_size
    tan_half = np.tan(camera.fov / 2.0)
    aspect = w / h
    safe = np.where(depth > 1e-12, depth, 1.0)
    ndc = np.stack([x / (safe * tan_half * aspect), y / (safe * tan_half)], axis=-1)

    f = mesh.faces
    verts2d = ndc[f]                                   # (F, 3, 2)
    vert_depth = depth[f]                              # (F, 3)
    visible = (vert_depth > camera.near).all(axis=1)
    centroid_depth = vert_depth.mean(axis=1)
    z_min = 1.0 / camera.far
    front = centroid_depth > 1e-12
    z_inv = np.where(front, 1.0 / np.where(front, centroid_depth, 1.0), z_min)
    verts2d = np.where(visible[:, None, None], verts2d, 0.0)
    return ProjectedScene(verts2d=verts2d, z_inv=z_inv, z_min=z_min,
                          visible=visible, centroid_depth=centroid_depth)


def pixel_centers(image_size) -> np.ndarray:
    """NDC coordinates of pixel centers, row-major, y up: (h*w, 2)."""
    h, w = image_size
    xs = -1.0 + (2.0 * (np.arange(w) + 0.5)) / w
    ys = 1.0 - (2.0 * (np.arange(h) + 0.5)) / h
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


# ---------------------------------------------------------------------------
# signed distance
# ---------------------------------------------------------------------------


def signed_distance_grid(pixels: np.ndarray, tris: np.ndarray):
    """Signed Euclidean distance from pixel centers to triangle boundaries.

    Args:
        pixels: (N, 2) points in NDC.
        tris: (F, 3, 2) triangle vertices in NDC.

    Returns:
        dist: (N, F) signed distances, positive inside.
        cache: per-edge quantities reused by :func:`signed_distance_grad`.

    Zero-area triangles yield ``DEGENERATE_DISTANCE`` for every pixel.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.float64)
    n = len(pixels)
    f = len(tris)

    dmin2 = np.full((n, f), np.inf)
    emin = np.zeros((n, f), dtype=np.int8)
    all_pos = np.ones((n, f), dtype=bool)
    all_neg = np.ones((n, f), dtype=bool)
    tmin = np.zeros((n, f))
    diffx = np.zeros((n, f))
    diffy = np.zeros((n, f))

    for e in range(3):
        a = tris[:, e, :]
        b = tris[:, (e + 1) % 3, :]
        ex = b[:, 0] - a[:, 0]
        ey = b[:, 1] - a[:, 1]
        ee = ex * ex + ey * ey
        ee_safe = np.where(ee > 0.0, ee, 1.0)
        apx = pixels[:, 0][:, None] - a[:, 0][None, :]
        apy = pixels[:, 1][:, None] - a[:, 1][None, :]
        t = (apx * ex[None, :] + apy * ey[None, :]) / ee_safe[None, :]
        np.clip(t, 0.0, 1.0, out=t)
        dx = apx - t * ex[None, :]
        dy = apy - t * ey[None, :]
        d2 = dx * dx + dy * dy
        closer = d2 < dmin2
        np.copyto(dmin2, d2, where=closer)
        emin[closer] = e
        np.copyto(tmin, t, where=closer)
        np.copyto(diffx, dx, where=closer)
        np.copyto(diffy, dy, where=closer)
        cross = ex[None, :] * apy - ey[None, :] * apx
        all_pos &= cross > 0.0
        all_neg &= cross < 0.0

    inside = all_pos | all_neg
    dist = np.sqrt(dmin2)
    dist[~inside] *= -1.0

    # Degenerate faces: zero area in camera plane.
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    degenerate = area2 == 0.0
    if degenerate.any():
        dist[:, degenerate] = DEGENERATE_DISTANCE

    cache = {"emin": emin, "tmin": tmin, "diffx": diffx, "diffy": diffy,
             "dist_abs": np.sqrt(dmin2), "inside": inside, "degenerate": degenerate}
    return dist, cache


def signed_distance_grad(g_dist: np.ndarray, cache: dict) -> np.ndarray:
    """Adjoint of signed_distance_grid with respect to triangle vertices.

    Args:
        g_dist: (N, F) upstream gradient on the signed distances.
        cache: second return value of :func:`signed_distance_grid`.

    Returns:
        (F, 3, 2) gradient on the triangle vertices.

    The active nearest edge (a, b) with clamped parameter t contributes
    d|p-q|/da = -(1-t) u and d|p-q|/db = -t u with u the unit vector from the
    closest point to the pixel; the inside/outside sign multiplies through.
    Pixels exactly on a boundary (zero distance) contribute nothing.
    """
    emin = cache["emin"]
    t = cache["tmin"]
    dist_abs = cache["dist_abs"]
    inside = cache["inside"]
    n, f = emin.shape

    sign = np.where(inside, 1.0, -1.0)
    safe = np.where(dist_abs > _DISTANCE_GRAD_EPS, dist_abs, np.inf)
    scale = g_dist * sign / safe
    ux = cache["diffx"] * scale
    uy = cache["diffy"] * scale

    grad = np.zeros((f, 3, 2))
    one_m_t = 1.0 - t
    for e in range(3):
        on_e = emin == e
        wa_x = np.where(on_e, -one_m_t * ux, 0.0).sum(axis=0)
        wa_y = np.where(on_e, -one_m_t * uy, 0.0).sum(axis=0)
        wb_x = np.where(on_e, -t * ux, 0.0).sum(axis=0)
        wb_y = np.where(on_e, -t * uy, 0.0).sum(axis=0)
        grad[:, e, 0] += wa_x
        grad[:, e, 1] += wa_y
        grad[:, (e + 1) % 3, 0] += wb_x
        grad[:, (e + 1) % 3, 1] += wb_y
    if cache["degenerate"].any():
        grad[cache["degenerate"]] = 0.0
    return grad


def signed_distance(pixel_center, tri) -> float:
    """Signed distance from one pixel center to one 2D triangle boundary."""
    d, _ = signed_distance_grid(np.asarray(pixel_center, dtype=np.float64)[None, :],
                                np.asarray(tri, dtype=np.float64)[None, :, :])
    return float(d[0, 0])


# ---------------------------------------------------------------------------
# shading and builtin geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionalLight:
    """Flat Lambertian light: color = base * (ambient + diffuse * max(0, n.l))."""

    direction: tuple = (0.0, 0.0, 1.0)   # points from the surface toward the light
    ambient: float = 0.35
    diffuse: float = 0.65


def face_normals(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)


def shade(mesh: Mesh, light: DirectionalLight) -> np.ndarray:
    """Per-face RGB from flat Lambertian shading, clamped to [0, 1].

    Normals are evaluated in the mesh's object frame, so shading is fixed per
    scene and does not vary with pose (colors enter the renderer as per-face
    constants).
    """
    l = np.asarray(light.direction, dtype=np.float64)
    l = l / np.linalg.norm(l)
    lambert = np.maximum(face_normals(mesh) @ l, 0.0)
    factor = light.ambient + light.diffuse * lambert
    return np.clip(mesh.face_colors * factor[:, None], 0.0, 1.0)


#: Face colors of the builtin cube: one color per axis-aligned side
#: (+x, -x, +y, -y, +z, -z), two triangles each.
CUBE_FACE_COLORS = (
    (0.85, 0.10, 0.10),
    (0.10, 0.75, 0.15),
    (0.10, 0.25, 0.85),
    (0.90, 0.80, 0.10),
    (0.10, 0.80, 0.80),
    (0.85, 0.15, 0.80),
)


def unit_cube() -> Mesh:
    """Axis-aligned unit cube centered at the origin with 6 distinct colors."""
    corners = np.array([[x, y, z]
                        for x in (-0.5, 0.5)
                        for y in (-0.5, 0.5)
                        for z in (-0.5, 0.5)], dtype=np.float64)
    # Outward-facing winding, two triangles per side.
    quads = {
        0: (4, 6, 7, 5),   # +x
        1: (0, 1, 3, 2),   # -x
        2: (2, 3, 7, 6),   # +y
        3: (0, 4, 5, 1),   # -y
        4: (1, 5, 7, 3),   # +z
        5: (0, 2, 6, 4),   # -z
    }
    faces = []
    colors = []
    for side, (a, b, c, d) in quads.items():
        faces.append((a, b, c))
        faces.append((a, c, d))
        colors.append(CUBE_FACE_COLORS[side])
        colors.append(CUBE_FACE_COLORS[side])
    return Mesh.create(corners, np.array(faces), np.array(colors))


# ---------------------------------------------------------------------------
# Wavefront OBJ I/O
# ---------------------------------------------------------------------------


def load_obj(path, fan_triangulate: bool = True,
             default_color=(0.7, 0.7, 0.7)) -> Mesh:
    """Load a triangulated Wavefront OBJ (v/f records).

    Faces with more than three vertices are fan-triangulated when
    ``fan_triangulate`` is set, otherwise rejected.  Vertex indices may be
    1-based or negative (relative).  Materials are ignored; every face gets
    ``default_color``.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such mesh file: {path}")
    vertices = []
    faces = []
    face_lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "v":
                if len(tokens) < 4:
                    raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ObjParseError(f"{path}:{lineno}: bad vertex coordinate") from None
            elif kind == "f":
                refs = []
                for tok in tokens[1:]:
                    idx_str = tok.split("/")[0]
                    try:
                        refs.append(int(idx_str))
                    except ValueError:
                        raise ObjParseError(f"{path}:{lineno}: bad face index {tok!r}") from None
                if len(refs) < 3:
                    raise ObjParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                if len(refs) > 3 and not fan_triangulate:
                    raise ObjParseError(
                        f"{path}:{lineno}: non-triangular face and fan triangulation disabled")
                for k in range(1, len(refs) - 1):
                    faces.append((refs[0], refs[k], refs[k + 1]))
                    face_lines.append(lineno)
            # vn / vt / usemtl / mtllib / o / g / s records are ignored.

    nv = len(vertices)
    resolved = []
    for (a, b, c), lineno in zip(faces, face_lines):
        tri = []
        for r in (a, b, c):
            i = r - 1 if r > 0 else nv + r
            if i < 0 or i >= nv:
                raise ObjParseError(
                    f"{path}:{lineno}: face index {r} out of range for {nv} vertices")
            tri.append(i)
        resolved.append(tri)
    if not resolved:
        raise ObjParseError(f"{path}: no faces found")
    return Mesh.create(np.array(vertices), np.array(resolved, dtype=np.int64),
                       default_color=default_color)


def save_obj(mesh: Mesh, path) -> None:
    """Write vertices and faces as a minimal Wavefront OBJ."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
