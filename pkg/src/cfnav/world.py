"""Static maps for closed-loop episodes: obstacles, ray casting, shortest paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .geometry import Pose2

N_RAYS = 16
MAX_RANGE = 5.0


@dataclass
class WorldMap:
    circles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))  # cx, cy, r
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # x1, y1, x2, y2

    def __post_init__(self):
        self.circles = np.asarray(self.circles, dtype=float).reshape(-1, 3)
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        self._cloud = None

    @property
    def empty(self) -> bool:
        return len(self.circles) == 0 and len(self.segments) == 0

    def to_dict(self) -> dict:
        return {"circles": self.circles.tolist(), "segments": self.segments.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WorldMap":
        return cls(d.get("circles", []), d.get("segments", []))

    def jittered(self, rng: np.random.Generator, scale: float) -> "WorldMap":
        c = self.circles.copy()
        s = self.segments.copy()
        if scale > 0:
            c[:, :2] += rng.normal(0.0, scale, size=(len(c), 2))
            s += np.repeat(rng.normal(0.0, scale, size=(len(s), 2)), 2, axis=0).reshape(len(s), 4)
        return WorldMap(c, s)

    # --- distances -----------------------------------------------------------

    def nearest(self, points):
        """Signed clearance to the nearest obstacle surface and the nearest surface point."""
        p = np.asarray(points, dtype=float)
        shape = p.shape[:-1]
        p = p.reshape(-1, 2)
        best = np.full(len(p), np.inf)
        near = np.zeros_like(p)
        if len(self.circles):
            diff = p[:, None, :] - self.circles[None, :, :2]
            dc = np.linalg.norm(diff, axis=-1)
            d = dc - self.circles[None, :, 2]
            j = np.argmin(d, axis=1)
            i = np.arange(len(p))
            best = d[i, j]
            u = diff[i, j] / np.maximum(dc[i, j], 1e-12)[:, None]
            near = self.circles[j, :2] + u * self.circles[j, 2:3]
        if len(self.segments):
            q, d = _closest_on_segments(p, self.segments)
            j = np.argmin(d, axis=1)
            i = np.arange(len(p))
            better = d[i, j] < best
            best = np.where(better, d[i, j], best)
            near = np.where(better[:, None], q[i, j], near)
        return best.reshape(shape), near.reshape(shape + (2,))

    def clearance(self, points):
        return self.nearest(points)[0]

    def boundary_cloud(self, spacing: float = 0.1) -> np.ndarray:
        if self._cloud is None:
            pts = [np.zeros((0, 2))]
            for cx, cy, r in self.circles:
                n = max(8, int(np.ceil(2 * np.pi * r / spacing)))
                a = np.linspace(0, 2 * np.pi, n, endpoint=False)
                pts.append(np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], -1))
            for x1, y1, x2, y2 in self.segments:
                n = max(2, int(np.ceil(np.hypot(x2 - x1, y2 - y1) / spacing)) + 1)
                t = np.linspace(0, 1, n)[:, None]
                pts.append(np.array([x1, y1]) * (1 - t) + np.array([x2, y2]) * t)
            self._cloud = np.concatenate(pts)
        return self._cloud

    def local_points(self, pose, radius: float = 2.5, max_points: int = 64):
        """Obstacle boundary points near ``pose`` in its frame, padded, with a mask."""
        from .geometry import points_to_frame

        cloud = self.boundary_cloud()
        out = np.zeros((max_points, 2))
        mask = np.zeros(max_points, dtype=bool)
        if len(cloud) == 0:
            return out, mask
        pose = np.asarray(pose, dtype=float)
        d = np.linalg.norm(cloud - pose[:2], axis=1)
        idx = np.flatnonzero(d < radius)
        if len(idx) > max_points:
            idx = idx[np.argsort(d[idx], kind="stable")[:max_points]]
        out[: len(idx)] = points_to_frame(cloud[idx], pose)
        mask[: len(idx)] = True
        return out, mask

    # --- sensing -------------------------------------------------------------

    def raycast(self, pose, n_rays: int = N_RAYS, max_range: float = MAX_RANGE) -> np.ndarray:
        pose = np.asarray(pose, dtype=float)
        ang = pose[2] + 2 * np.pi * np.arange(n_rays) / n_rays
        u = np.stack([np.cos(ang), np.sin(ang)], -1)
        o = pose[:2]
        best = np.full(n_rays, max_range)
        if len(self.circles):
            oc = o - self.circles[:, :2]  # (C, 2)
            b = u @ oc.T  # (R, C)
            c = np.sum(oc ** 2, axis=1) - self.circles[:, 2] ** 2
            disc = b ** 2 - c
            sq = np.sqrt(np.maximum(disc, 0))
            t1, t2 = -b - sq, -b + sq
            t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
            t = np.where(disc >= 0, t, np.inf)
            best = np.minimum(best, t.min(axis=1))
        if len(self.segments):
            a = self.segments[:, :2]
            e = self.segments[:, 2:] - a
            denom = u[:, 0:1] * e[None, :, 1] - u[:, 1:2] * e[None, :, 0]
            w = a - o
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
                s = (w[None, :, 0] * u[:, 1:2] - w[None, :, 1] * u[:, 0:1]) / denom
            ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0) & (s <= 1)
            best = np.minimum(best, np.where(ok, t, np.inf).min(axis=1))
        return np.clip(best, 1e-3, max_range)

    def segment_clear(self, p, q, inflate: float) -> bool:
        return bool(_segments_clear(np.asarray([p]), np.asarray([q]), self, inflate)[0])

    # --- planning ------------------------------------------------------------

    def shortest_path(self, start, goal, inflate: float = 0.25, n_poly: int = 12):
        """Visibility-graph shortest path around obstacles inflated by ``inflate``.

        Returns (length, waypoints).  Obstacles are replaced by circumscribing
        polygons, so the length is exact up to the polygon approximation.
        """
        start, goal = np.asarray(start, float)[:2], np.asarray(goal, float)[:2]
        verts = [start, goal] + list(self._inflated_vertices(inflate, n_poly))
        pts = np.array(verts)
        free = self.clearance(pts) >= inflate - 1e-9
        free[:2] = True
        idx = np.flatnonzero(free)
        pts = pts[idx]
        ii, jj = np.triu_indices(len(pts), 1)
        ok = _segments_clear(pts[ii], pts[jj], self, inflate - 1e-7)
        g = nx.Graph()
        g.add_nodes_from(range(len(pts)))
        lengths = np.linalg.norm(pts[ii] - pts[jj], axis=1)
        g.add_weighted_edges_from(zip(ii[ok].tolist(), jj[ok].tolist(), lengths[ok].tolist()))
        try:
            length, path = nx.single_source_dijkstra(g, 0, 1)
        except nx.NetworkXNoPath:
            return float("inf"), np.array([start, goal])
        return float(length), pts[path]

    def _inflated_vertices(self, inflate, n_poly):
        k = 1.0 / np.cos(np.pi / n_poly) * 1.001
        a = 2 * np.pi * (np.arange(n_poly) + 0.5) / n_poly
        ring = np.stack([np.cos(a), np.sin(a)], -1)
        for cx, cy, r in self.circles:
            yield from np.array([cx, cy]) + ring * (r + inflate) * k
        for x1, y1, x2, y2 in self.segments:
            for end in (np.array([x1, y1]), np.array([x2, y2])):
                yield from end + ring * inflate * k


def _closest_on_segments(p, segs):
    a = segs[None, :, :2]
    e = segs[None, :, 2:] - segs[None, :, :2]
    l2 = np.maximum(np.sum(e ** 2, axis=-1), 1e-12)
    t = np.clip(np.sum((p[:, None, :] - a) * e, axis=-1) / l2, 0.0, 1.0)
    q = a + t[..., None] * e
    return q, np.linalg.norm(p[:, None, :] - q, axis=-1)


def _seg_seg_distance(p1, q1, p2, q2):
    """Distance between segment sets (E,2)x(E,2) and (S,2)x(S,2), -> (E, S)."""
    def pt_seg(p, a, b):
        e = b - a
        l2 = np.maximum(np.sum(e ** 2, -1), 1e-12)
        t = np.clip(np.sum((p - a) * e, -1) / l2, 0, 1)
        return np.linalg.norm(p - (a + t[..., None] * e), axis=-1)

    P1, Q1 = p1[:, None], q1[:, None]
    P2, Q2 = p2[None], q2[None]
    d = np.minimum.reduce([pt_seg(P1, P2, Q2), pt_seg(Q1, P2, Q2), pt_seg(P2, P1, Q1), pt_seg(Q2, P1, Q1)])

    def cross(a, b):
        return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

    d1, d2 = cross(Q1 - P1, P2 - P1), cross(Q1 - P1, Q2 - P1)
    d3, d4 = cross(Q2 - P2, P1 - P2), cross(Q2 - P2, Q1 - P2)
    crossing = (d1 * d2 < 0) & (d3 * d4 < 0)
    return np.where(crossing, 0.0, d)


def _segments_clear(p, q, world: WorldMap, inflate: float) -> np.ndarray:
    ok = np.ones(len(p), dtype=bool)
    if len(world.circles):
        c = world.circles[:, :2]
        e = q - p
        l2 = np.maximum(np.sum(e ** 2, -1), 1e-12)
        t = np.clip(np.sum((c[None] - p[:, None]) * e[:, None], -1) / l2[:, None], 0, 1)
        closest = p[:, None] + t[..., None] * e[:, None]
        d = np.linalg.norm(closest - c[None], axis=-1)
        ok &= np.all(d >= world.circles[None, :, 2] + inflate, axis=1)
    if len(world.segments):
        d = _seg_seg_distance(p, q, world.segments[:, :2], world.segments[:, 2:])
        ok &= np.all(d >= inflate, axis=1)
    return ok


def pose_array(p) -> np.ndarray:
    return p.as_array() if isinstance(p, Pose2) else np.asarray(p, dtype=float)
