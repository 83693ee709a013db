"""Exact 2D polygon geometry, planar-arm kinematics, and environment generation.

All polygons are simple, counter-clockwise vertex loops. Distances are exact
(segment arithmetic, no sampling); the signed collision distance used as the
training label is positive separation outside contact and negative
translational penetration depth inside it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

WORKSPACE_LO = np.array([-1.0, -1.0])
WORKSPACE_HI = np.array([1.0, 1.0])
SQUARE_SIDE = 0.2
LINK_WIDTH = 0.06
LINK_LEN_2DOF = 0.5
LINK_LEN_7DOF = 0.2

_MIN_VERTEX_SEP = 1e-12
ENV_KINDS = ("a", "b", "c", "d", "e")


class InvalidGeometryError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# polygons


@dataclass(frozen=True)
class Polygon:
    """Simple closed 2D vertex loop, stored counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise InvalidGeometryError("polygon needs >= 3 two-dimensional vertices")
        if not np.isfinite(verts).all():
            raise InvalidGeometryError("polygon has non-finite vertices")
        nxt = np.roll(verts, -1, axis=0)
        if (np.linalg.norm(nxt - verts, axis=1) <= _MIN_VERTEX_SEP).any():
            raise InvalidGeometryError("consecutive vertices coincide")
        area = _signed_area(verts)
        if abs(area) <= _MIN_VERTEX_SEP:
            raise InvalidGeometryError("polygon is degenerate (zero area)")
        if area < 0:
            verts = verts[::-1].copy()
        if _self_intersects(verts):
            raise InvalidGeometryError("polygon boundary self-intersects")
        object.__setattr__(self, "vertices", verts)

    @property
    def n(self):
        return self.vertices.shape[0]

    def edges(self):
        return zip(self.vertices, np.roll(self.vertices, -1, axis=0))

    def translated(self, offset):
        return Polygon(self.vertices + np.asarray(offset, dtype=np.float64))

    def is_convex(self, tol=1e-12):
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        return bool((cross >= -tol).all())


def _signed_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, q, r, tol=1e-12):
    # r collinear with p-q assumed; is r within the segment's bounding box?
    return (
        min(p[0], q[0]) - tol <= r[0] <= max(p[0], q[0]) + tol
        and min(p[1], q[1]) - tol <= r[1] <= max(p[1], q[1]) + tol
    )


def _segments_intersect(p1, p2, q1, q2, tol=1e-12):
    """True if closed segments touch or cross."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True
    if abs(d1) <= tol and _on_segment(q1, q2, p1, tol):
        return True
    if abs(d2) <= tol and _on_segment(q1, q2, p2, tol):
        return True
    if abs(d3) <= tol and _on_segment(p1, p2, q1, tol):
        return True
    if abs(d4) <= tol and _on_segment(p1, p2, q2, tol):
        return True
    return False


def _self_intersects(verts):
    n = verts.shape[0]
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a1, a2, verts[j], verts[(j + 1) % n]):
                return True
    return False


# Vectorized edge-pair kernels: P/Q are (n, 2) arrays of segment endpoints.


def _cross_many(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def _any_proper_cross(P1, P2, Q1, Q2, tol=1e-12):
    """Any proper crossing between segment sets (all pairs)."""
    p1 = P1[:, None, :]
    p2 = P2[:, None, :]
    q1 = Q1[None, :, :]
    q2 = Q2[None, :, :]
    d1 = _cross_many(q1, q2, p1)
    d2 = _cross_many(q1, q2, p2)
    d3 = _cross_many(p1, p2, q1)
    d4 = _cross_many(p1, p2, q2)
    straddle_p = ((d1 > tol) & (d2 < -tol)) | ((d1 < -tol) & (d2 > tol))
    straddle_q = ((d3 > tol) & (d4 < -tol)) | ((d3 < -tol) & (d4 > tol))
    return bool((straddle_p & straddle_q).any())


def _points_strictly_inside(points, poly, tol=1e-12):
    """Boolean mask: strictly inside (on-boundary counts as outside)."""
    verts = poly.vertices
    x1 = verts[None, :, 0]
    y1 = verts[None, :, 1]
    v2 = np.roll(verts, -1, axis=0)
    x2 = v2[None, :, 0]
    y2 = v2[None, :, 1]
    px = points[:, 0:1]
    py = points[:, 1:2]
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    within_box = (
        (px >= np.minimum(x1, x2) - tol)
        & (px <= np.maximum(x1, x2) + tol)
        & (py >= np.minimum(y1, y2) - tol)
        & (py <= np.maximum(y1, y2) + tol)
    )
    on_boundary = ((np.abs(cross) <= tol) & within_box).any(axis=1)
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (xcross > px)
    inside = (hits.sum(axis=1) % 2).astype(bool)
    return inside & ~on_boundary


def _segment_distance_many(P1, P2, Q1, Q2):
    """Min distance over all segment pairs, assuming no pair intersects."""
    best = np.inf
    for A1, A2, B1, B2 in ((P1, P2, Q1, Q2), (Q1, Q2, P1, P2)):
        ab = A2 - A1  # (n, 2)
        denom = np.sum(ab * ab, axis=1)  # (n,)
        for endpoint in (B1, B2):
            ap = endpoint[None, :, :] - A1[:, None, :]  # (n, m, 2)
            t = np.einsum("nmk,nk->nm", ap, ab)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(denom[:, None] > 0, t / denom[:, None], 0.0)
            t = np.clip(t, 0.0, 1.0)
            closest = A1[:, None, :] + t[..., None] * ab[:, None, :]
            d2 = np.sum((closest - endpoint[None, :, :]) ** 2, axis=2)
            m = d2.min()
            if m < best:
                best = m
    return float(np.sqrt(best))


def _interior_point(poly):
    # Centroid of the first ear triangle is strictly interior.
    tri = ear_clip(poly)[0]
    return poly.vertices[list(tri)].mean(axis=0)


def interiors_overlap(a: Polygon, b: Polygon) -> bool:
    """True iff the open interiors intersect (boundary-only contact is False).

    Exact for shapes in generic position: detects proper boundary crossings,
    vertex/edge-midpoint containment witnesses, and full nesting.
    """
    av, bv = a.vertices, b.vertices
    # Cheap reject: disjoint bounding boxes cannot overlap.
    if (av.max(axis=0) < bv.min(axis=0) - 1e-12).any() or (
        bv.max(axis=0) < av.min(axis=0) - 1e-12
    ).any():
        return False
    a2 = np.roll(av, -1, axis=0)
    b2 = np.roll(bv, -1, axis=0)
    if _any_proper_cross(av, a2, bv, b2):
        return True
    witnesses_a = np.vstack([av, 0.5 * (av + a2)])
    if _points_strictly_inside(witnesses_a, b).any():
        return True
    witnesses_b = np.vstack([bv, 0.5 * (bv + b2)])
    if _points_strictly_inside(witnesses_b, a).any():
        return True
    # Only coincident boundaries can still hide an overlap here, and those
    # require one bounding box to contain the other.
    lo_a, hi_a = av.min(axis=0), av.max(axis=0)
    lo_b, hi_b = bv.min(axis=0), bv.max(axis=0)
    a_in_b = (lo_b <= lo_a + 1e-12).all() and (hi_a <= hi_b + 1e-12).all()
    b_in_a = (lo_a <= lo_b + 1e-12).all() and (hi_b <= hi_a + 1e-12).all()
    if a_in_b and _points_strictly_inside(_interior_point(a)[None, :], b).any():
        return True
    if b_in_a and _points_strictly_inside(_interior_point(b)[None, :], a).any():
        return True
    return False


def min_distance(a: Polygon, b: Polygon) -> float:
    """Exact minimum distance between two polygons; 0 when touching or overlapping."""
    if interiors_overlap(a, b):
        return 0.0
    av, bv = a.vertices, b.vertices
    a2 = np.roll(av, -1, axis=0)
    b2 = np.roll(bv, -1, axis=0)
    # Touching (non-proper contact) shows up as zero segment distance below.
    return _segment_distance_many(av, a2, bv, b2)


def ear_clip(poly: Polygon):
    """Triangulate a simple CCW polygon; returns index triples into poly.vertices."""
    verts = poly.vertices
    idx = list(range(poly.n))
    triangles = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * poly.n * poly.n:
            raise InvalidGeometryError("ear clipping failed to terminate")
        n = len(idx)
        clipped = False
        best_fallback = None
        best_cross = -np.inf
        for k in range(n):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % n]
            a, b, c = verts[i0], verts[i1], verts[i2]
            cr = _cross(a, b, c)
            if cr <= 1e-15:
                continue
            if cr > best_cross:
                best_cross, best_fallback = cr, k
            ok = True
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                if _point_in_triangle(verts[other], a, b, c):
                    ok = False
                    break
            if ok:
                triangles.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            if best_fallback is None:
                raise InvalidGeometryError("ear clipping found no convex vertex")
            k = best_fallback
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            triangles.append((i0, i1, i2))
            idx.pop(k)
    triangles.append(tuple(idx))
    return triangles


def _point_in_triangle(p, a, b, c, tol=1e-12):
    d1 = _cross(a, b, p)
    d2 = _cross(b, c, p)
    d3 = _cross(c, a, p)
    return d1 >= -tol and d2 >= -tol and d3 >= -tol


def _edge_normals(verts):
    e = np.roll(verts, -1, axis=0) - verts
    normals = np.stack([-e[:, 1], e[:, 0]], axis=1)
    lens = np.linalg.norm(normals, axis=1)
    return normals / lens[:, None]


def _axis_depth(axis, va, vb):
    pa = va @ axis
    pb = vb @ axis
    return min(pa.max() - pb.min(), pb.max() - pa.min())


def _convex_sat_depth(va, vb):
    axes = np.vstack([_edge_normals(va), _edge_normals(vb)])
    depth = np.inf
    for axis in axes:
        d = _axis_depth(axis, va, vb)
        if d < depth:
            depth = d
    return float(depth)


def _triangles_overlap(ta, tb):
    axes = np.vstack([_edge_normals(ta), _edge_normals(tb)])
    for axis in axes:
        if _axis_depth(axis, ta, tb) <= 1e-12:
            return False
    return True


def penetration_depth(a: Polygon, b: Polygon) -> float:
    """Minimum translation magnitude separating two overlapping polygons.

    Convex pairs use the exact separating-axis minimum over both polygons'
    edge normals. Non-convex pairs are ear-clipped and the depth is the
    maximum over intersecting triangle pairs of the pairwise separating-axis
    depth, a local estimate that converges to the exact value as the overlap
    becomes shallow.
    """
    if not interiors_overlap(a, b):
        raise PreconditionError("penetration_depth requires overlapping interiors")
    if a.is_convex() and b.is_convex():
        return _convex_sat_depth(a.vertices, b.vertices)
    tris_a = [a.vertices[list(t)] for t in ear_clip(a)]
    tris_b = [b.vertices[list(t)] for t in ear_clip(b)]
    depth = 0.0
    for ta in tris_a:
        for tb in tris_b:
            if _triangles_overlap(ta, tb):
                d = _convex_sat_depth(ta, tb)
                if d > depth:
                    depth = d
    return float(depth)


def collision_distance(robot, obstacles) -> float:
    """Signed clearance: min separation when free, minus max penetration when not."""
    if not robot or not obstacles:
        raise PreconditionError("collision_distance needs non-empty polygon lists")
    worst_pen = None
    for obst in obstacles:
        for part in robot:
            if interiors_overlap(part, obst):
                pen = penetration_depth(part, obst)
                if worst_pen is None or pen > worst_pen:
                    worst_pen = pen
    if worst_pen is not None:
        return -float(worst_pen)
    best = np.inf
    for obst in obstacles:
        for part in robot:
            d = min_distance(part, obst)
            if d < best:
                best = d
    return float(best)


# ---------------------------------------------------------------------------
# planar arm


@dataclass(frozen=True)
class PlanarArm:
    dof: int
    link_lengths: np.ndarray
    link_widths: np.ndarray
    base_position: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, dtype=np.float64)
        widths = np.asarray(self.link_widths, dtype=np.float64)
        base = np.asarray(self.base_position, dtype=np.float64)
        if lengths.shape != (self.dof,) or widths.shape != (self.dof,):
            raise DimensionError("link_lengths/link_widths must have one entry per joint")
        if (lengths <= 0).any() or (widths <= 0).any():
            raise InvalidGeometryError("link lengths and widths must be positive")
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "link_widths", widths)
        object.__setattr__(self, "base_position", base)


def forward_kinematics(arm: PlanarArm, joints):
    """Chain of link rectangles for a joint configuration.

    With a plain array the result is a list of Polygon. With an autodiff
    Value the result is a list of (4, 2) Values whose coordinates carry
    derivatives with respect to the joints.
    """
    if isinstance(joints, ad.Value):
        if joints.data.shape != (arm.dof,):
            raise DimensionError(f"expected {arm.dof} joint angles")
        return _fk_taped(arm, joints)
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (arm.dof,):
        raise DimensionError(f"expected {arm.dof} joint angles")
    if not np.isfinite(joints).all():
        raise InvalidGeometryError("joint angles must be finite")
    polys = []
    px, py = float(arm.base_position[0]), float(arm.base_position[1])
    angle = 0.0
    for l in range(arm.dof):
        angle += float(joints[l])
        c, s = np.cos(angle), np.sin(angle)
        L, hw = float(arm.link_lengths[l]), 0.5 * float(arm.link_widths[l])
        local = np.array([[0.0, -hw], [L, -hw], [L, hw], [0.0, hw]])
        world = np.empty_like(local)
        world[:, 0] = px + local[:, 0] * c - local[:, 1] * s
        world[:, 1] = py + local[:, 0] * s + local[:, 1] * c
        polys.append(Polygon(world))
        px += L * c
        py += L * s
    return polys


def _fk_taped(arm, joints):
    tape = joints.tape
    px = tape.constant(float(arm.base_position[0]))
    py = tape.constant(float(arm.base_position[1]))
    angle = None
    links = []
    for l in range(arm.dof):
        j = ad.slice_(joints, l)
        angle = j if angle is None else ad.add(angle, j)
        c, s = ad.cos(angle), ad.sin(angle)
        L, hw = float(arm.link_lengths[l]), 0.5 * float(arm.link_widths[l])
        scalars = []
        for cx, cy in ((0.0, -hw), (L, -hw), (L, hw), (0.0, hw)):
            x = ad.add(px, ad.sub(ad.mul(c, tape.constant(cx)), ad.mul(s, tape.constant(cy))))
            y = ad.add(py, ad.add(ad.mul(s, tape.constant(cx)), ad.mul(c, tape.constant(cy))))
            scalars.extend([x, y])
        links.append(ad.assemble(scalars, (4, 2)))
        px = ad.add(px, ad.mul(c, tape.constant(L)))
        py = ad.add(py, ad.mul(s, tape.constant(L)))
    return links


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class Environment:
    kind: str
    seed: int
    arm: PlanarArm
    obstacles: tuple
    workspace_lo: np.ndarray = field(default_factory=lambda: WORKSPACE_LO.copy())
    workspace_hi: np.ndarray = field(default_factory=lambda: WORKSPACE_HI.copy())

    def __post_init__(self):
        # Generated environments always carry >= 1 obstacle; 0 is allowed so
        # obstacle-free control tasks can reuse the same plumbing.
        if len(self.obstacles) > 20:
            raise InvalidGeometryError("environments carry at most 20 obstacles")
        for poly in self.obstacles:
            v = poly.vertices
            if (v < self.workspace_lo - 1e-12).any() or (v > self.workspace_hi + 1e-12).any():
                raise InvalidGeometryError("obstacle vertex outside workspace bounds")


def square_polygon(center, side=SQUARE_SIDE, angle=0.0):
    h = side / 2.0
    local = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return Polygon(local @ rot.T + np.asarray(center, dtype=np.float64))


def _arm_for_kind(kind):
    if kind in ("a", "b"):
        return PlanarArm(2, np.full(2, LINK_LEN_2DOF), np.full(2, LINK_WIDTH))
    return PlanarArm(7, np.full(7, LINK_LEN_7DOF), np.full(7, LINK_WIDTH))


# Fixed layouts (kinds a and c) are frozen constants shared by every seed.
_FIXED_SQUARE_A = (0.45, 0.3, 0.35)  # x, y, rotation
_FIXED_LAYOUT_SEED_C = 20220209


def _random_square(rng):
    margin = SQUARE_SIDE * np.sqrt(2.0) / 2.0 + 0.02
    center = rng.uniform(WORKSPACE_LO + margin, WORKSPACE_HI - margin)
    angle = rng.uniform(0.0, np.pi / 2.0)
    return square_polygon(center, SQUARE_SIDE, angle)


def _alpha_blob(rng, alpha=0.6, n_points=20, max_keep=15, patch_half=0.15):
    """Random simple polygon from a point cloud, in the spirit of an alpha shape.

    Sample points in a local patch, keep one radius-connected cluster, and
    close the loop by sorting up to `max_keep` survivors around their
    centroid; resample when the loop degenerates.
    """
    radius = patch_half / alpha
    margin = patch_half * np.sqrt(2.0) + 0.02
    for _ in range(200):
        center = rng.uniform(WORKSPACE_LO + margin, WORKSPACE_HI - margin)
        pts = rng.uniform(center - patch_half, center + patch_half, size=(n_points, 2))
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        adj = d2 <= radius * radius
        seed_pt = int(np.argmin(np.sum((pts - center) ** 2, axis=1)))
        component = _connected_component(adj, seed_pt)
        if len(component) < 3:
            continue
        chosen = pts[sorted(component)]
        if chosen.shape[0] > max_keep:
            centroid = chosen.mean(axis=0)
            order = np.argsort(np.sum((chosen - centroid) ** 2, axis=1))
            chosen = chosen[np.sort(order[:max_keep])]
        centroid = chosen.mean(axis=0)
        angles = np.arctan2(chosen[:, 1] - centroid[1], chosen[:, 0] - centroid[0])
        loop = chosen[np.argsort(angles)]
        try:
            return Polygon(loop)
        except InvalidGeometryError:
            continue
    raise ConfigError("failed to sample a valid blob obstacle")


def _connected_component(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return seen


def generate_environment(kind: str, seed: int) -> Environment:
    """Deterministic environment per (kind, seed); kinds a/c have frozen obstacles."""
    if kind not in ENV_KINDS:
        raise ConfigError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")
    arm = _arm_for_kind(kind)
    rng = np.random.default_rng(np.random.SeedSequence([hash_kind(kind), int(seed)]))
    if kind == "a":
        x, y, rot = _FIXED_SQUARE_A
        obstacles = (square_polygon((x, y), SQUARE_SIDE, rot),)
    elif kind == "b":
        obstacles = (_random_square(rng),)
    elif kind == "c":
        fixed = np.random.default_rng(_FIXED_LAYOUT_SEED_C)
        obstacles = tuple(_random_square(fixed) for _ in range(20))
    elif kind == "d":
        obstacles = tuple(_random_square(rng) for _ in range(20))
    else:
        obstacles = tuple(_alpha_blob(rng) for _ in range(5))
    return Environment(kind=kind, seed=int(seed), arm=arm, obstacles=obstacles)


def hash_kind(kind):
    return ENV_KINDS.index(kind) + 101


def env_to_json(env: Environment) -> str:
    payload = {
        "kind": env.kind,
        "seed": env.seed,
        "arm": {
            "dof": env.arm.dof,
            "lengths": env.arm.link_lengths.tolist(),
            "widths": env.arm.link_widths.tolist(),
            "base": env.arm.base_position.tolist(),
        },
        "obstacles": [poly.vertices.tolist() for poly in env.obstacles],
    }
    return json.dumps(payload)


def env_from_json(text: str) -> Environment:
    payload = json.loads(text)
    arm = PlanarArm(
        dof=int(payload["arm"]["dof"]),
        link_lengths=np.array(payload["arm"]["lengths"]),
        link_widths=np.array(payload["arm"]["widths"]),
        base_position=np.array(payload["arm"]["base"]),
    )
    obstacles = tuple(Polygon(np.array(v)) for v in payload["obstacles"])
    return Environment(kind=payload["kind"], seed=int(payload["seed"]), arm=arm, obstacles=obstacles)
