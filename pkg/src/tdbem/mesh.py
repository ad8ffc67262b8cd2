"""Triangle surface meshes, the unit-cube family, OFF I/O and P0/P1 spaces."""
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DIRICHLET = 0
NEUMANN = 1


class MeshError(ValueError):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (n, 3)")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle references a missing vertex")
        p0, p1, p2 = self.corners()
        cross = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(cross, axis=1)
        if np.any(norm / 2 <= 1e-14):
            raise MeshError("degenerate triangle")
        self.areas = 0.5 * norm
        self.normals = cross / norm[:, None]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        t = self.triangles
        v = self.vertices
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def element_sizes(self):
        """Longest edge of each triangle."""
        p0, p1, p2 = self.corners()
        return np.max(np.stack([np.linalg.norm(p1 - p0, axis=1),
                                np.linalg.norm(p2 - p1, axis=1),
                                np.linalg.norm(p0 - p2, axis=1)]), axis=0)

    @property
    def h(self):
        return float(self.element_sizes.max())

    @property
    def surface_area(self):
        return float(self.areas.sum())

    def edges(self):
        """Map undirected edge -> list of (triangle, directed edge)."""
        table = defaultdict(list)
        for e, (a, b, c) in enumerate(self.triangles):
            for u, v in ((a, b), (b, c), (c, a)):
                table[(min(u, v), max(u, v))].append((e, (u, v)))
        return table

    def is_closed(self):
        return all(len(v) == 2 for v in self.edges().values())

    def orientation_consistent(self):
        for uses in self.edges().values():
            if len(uses) == 2 and uses[0][1] == uses[1][1]:
                return False
        return True

    def vertex_triangles(self):
        """List of incident triangles per vertex."""
        inc = [[] for _ in range(self.n_vertices)]
        for e, tri in enumerate(self.triangles):
            for v in tri:
                inc[v].append(e)
        return inc


def _reorient(triangles):
    """Propagate a consistent orientation over the edge graph (BFS per component)."""
    tris = [list(t) for t in triangles]
    edge_use = defaultdict(list)
    for e, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_use[(min(u, v), max(u, v))].append(e)
    seen = [False] * len(tris)

    def directed(e):
        a, b, c = tris[e]
        return {(a, b), (b, c), (c, a)}

    for start in range(len(tris)):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        while queue:
            e = queue.popleft()
            de = directed(e)
            for u, v in de:
                for f in edge_use[(min(u, v), max(u, v))]:
                    if f == e:
                        continue
                    same = (u, v) in directed(f)
                    if seen[f]:
                        if same:
                            raise MeshError("surface is not orientable")
                        continue
                    if same:
                        tris[f] = [tris[f][0], tris[f][2], tris[f][1]]
                    seen[f] = True
                    queue.append(f)
    return np.array(tris, dtype=np.int64)


def _orient_outward(vertices, triangles):
    """Flip a closed, consistently oriented surface so the enclosed volume is positive."""
    v = vertices[triangles]
    vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0
    if vol < 0:
        triangles = triangles[:, [0, 2, 1]]
    return triangles


def _cube_level0():
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                        for z in (-0.5, 0.5)])
    verts = [tuple(c) for c in corners]
    index = {v: i for i, v in enumerate(verts)}
    tris = []
    for axis in range(3):
        for sign in (-0.5, 0.5):
            center = [0.0, 0.0, 0.0]
            center[axis] = sign
            index[tuple(center)] = len(verts)
            verts.append(tuple(center))
            a1, a2 = [d for d in range(3) if d != axis]
            ring = []
            for u, w in ((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)):
                p = [0.0, 0.0, 0.0]
                p[axis], p[a1], p[a2] = sign, u, w
                ring.append(index[tuple(p)])
            c = index[tuple(center)]
            for i in range(4):
                tris.append([c, ring[i], ring[(i + 1) % 4]])
    vertices = np.array(verts, dtype=float)
    tris = np.array(tris, dtype=np.int64)
    # fix each face so its normal points away from the origin
    p = vertices[tris]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", nrm, p.mean(axis=1)) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return vertices, tris


def refine(mesh):
    """Uniform red refinement: every triangle is split into four at its edge midpoints."""
    verts = list(map(tuple, mesh.vertices))
    mid = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            mid[key] = len(verts)
            verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
        return mid[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))


def unit_cube(level):
    """Surface mesh of [-0.5, 0.5]^3 with h = 2**-level (level 1: 50 vertices, 96 triangles)."""
    if not 1 <= level <= 6:
        raise ValueError("level must be in 1..6")
    mesh = TriangleMesh(*_cube_level0())
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_mesh(path):
    """Read an ASCII OFF triangle mesh; inconsistent orientation is repaired with a warning."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = []
    for lineno, text in enumerate(raw, start=1):
        text = text.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text))
    if not lines or not lines[0][1].startswith("OFF"):
        raise MeshError("missing OFF header at line 1")
    header = lines[0][1][3:].split()
    pos = 1
    if not header:
        lineno, text = lines[pos]
        header = text.split()
        pos += 1
    try:
        nv, nf = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise MeshError(f"bad counts line at line {lines[pos - 1][0]}") from None
    if len(lines) < pos + nv + nf:
        raise MeshError("file ends before all vertices and faces were read")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, text = lines[pos + i]
        parts = text.split()
        try:
            verts[i] = [float(x) for x in parts[:3]]
        except ValueError:
            raise MeshError(f"bad vertex at line {lineno}") from None
        if len(parts) < 3:
            raise MeshError(f"bad vertex at line {lineno}")
    pos += nv
    tris = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, text = lines[pos + i]
        parts = text.split()
        try:
            arity = int(parts[0])
            idx = [int(x) for x in parts[1:1 + arity]]
        except (ValueError, IndexError):
            raise MeshError(f"bad face at line {lineno}") from None
        if arity != 3:
            raise MeshError(f"face arity {arity} at line {lineno}")
        if len(idx) != 3:
            raise MeshError(f"bad face at line {lineno}")
        tris[i] = idx
    mesh = TriangleMesh(verts, tris)
    if not mesh.orientation_consistent():
        log.warning("%s: inconsistent triangle orientation, reorienting", path)
        tris = _reorient(mesh.triangles)
        if TriangleMesh(verts, tris).is_closed():
            tris = _orient_outward(verts, tris)
        mesh = TriangleMesh(verts, tris)
    return mesh


@dataclass
class DofMap:
    """Degrees of freedom of one trace space restricted to one boundary part.

    ``global_ids`` are triangle indices (P0) or vertex indices (P1) that
    belong to this map, in dof order.
    """

    kind: str
    global_ids: np.ndarray
    n_total: int

    @property
    def size(self):
        return len(self.global_ids)

    def local_index(self):
        """Global id -> local dof index (-1 if not in this map)."""
        loc = np.full(self.n_total, -1, dtype=np.int64)
        loc[self.global_ids] = np.arange(self.size)
        return loc


@dataclass
class BoundaryPartition:
    """P0 and P1 dof maps split into Dirichlet and Neumann parts.

    Flux unknowns (P0) live on Dirichlet triangles, pressure unknowns (P1)
    on vertices touching a Neumann triangle; vertices on the interface go
    to the Neumann side.
    """

    mesh: TriangleMesh
    triangle_tag: np.ndarray
    p0_dirichlet: DofMap
    p0_neumann: DofMap
    p1_dirichlet: DofMap
    p1_neumann: DofMap


def boundary_partition(mesh, predicate=None):
    """Tag triangles via ``predicate(centroid, normal) -> bool`` (True = Dirichlet)."""
    if predicate is None:
        tag = np.full(mesh.n_triangles, DIRICHLET)
    else:
        tag = np.array([DIRICHLET if predicate(c, n) else NEUMANN
                        for c, n in zip(mesh.centroids, mesh.normals)])
    tri_d = np.nonzero(tag == DIRICHLET)[0]
    tri_n = np.nonzero(tag == NEUMANN)[0]
    on_neumann = np.zeros(mesh.n_vertices, dtype=bool)
    on_neumann[mesh.triangles[tri_n].ravel()] = True
    vert_n = np.nonzero(on_neumann)[0]
    vert_d = np.nonzero(~on_neumann)[0]
    nt, nv = mesh.n_triangles, mesh.n_vertices
    return BoundaryPartition(
        mesh=mesh,
        triangle_tag=tag,
        p0_dirichlet=DofMap("P0", tri_d, nt),
        p0_neumann=DofMap("P0", tri_n, nt),
        p1_dirichlet=DofMap("P1", vert_d, nv),
        p1_neumann=DofMap("P1", vert_n, nv),
    )


def positive_faces(centroid, normal):
    """Default mixed-problem split: faces whose outward normal has positive component sum."""
    return float(np.sum(normal)) > 0
