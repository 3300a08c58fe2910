"""Trimmed domains: boundary curves, cut-cell classification and quadrature, surface maps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import shapely
from scipy.interpolate import CubicSpline

from .mesh import BackgroundMesh
from .quadrature import gauss_01, npoints_for_degree, tensor_gauss_01, triangle_rule

OUTSIDE, INSIDE, CUT = 0, 1, 2
_LABELS = {OUTSIDE: "outside", INSIDE: "inside", CUT: "cut"}

# relative area below which a clip is treated as empty
AREA_FLOOR = 1e-14


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed parametric curve ``x(theta)``, theta in [t0, t0 + period]."""

    position: Callable
    derivative: Callable
    t0: float
    period: float
    name: str = "curve"

    @classmethod
    def from_points(cls, theta, xy, name="spline"):
        """Periodic cubic spline through ``xy`` at parameters ``theta``.

        The last record must repeat the first point one period later.
        """
        theta = np.asarray(theta, dtype=float)
        xy = np.asarray(xy, dtype=float)
        if theta.ndim != 1 or xy.shape != (theta.size, 2) or theta.size < 4:
            raise GeometryError("need at least 4 (theta, x, y) records")
        if np.any(np.diff(theta) <= 0):
            raise GeometryError("curve parameters must be strictly increasing")
        if np.max(np.abs(xy[-1] - xy[0])) > 1e-12:
            raise GeometryError("curve is not closed: last point must equal first")
        xy = xy.copy()
        xy[-1] = xy[0]
        cs = CubicSpline(theta, xy, bc_type="periodic")
        d = cs.derivative()
        return cls(cs, d, float(theta[0]), float(theta[-1] - theta[0]), name)

    @classmethod
    def circle(cls, center, radius, name="circle"):
        cx, cy = center

        def pos(t):
            t = np.asarray(t, dtype=float)
            return np.stack([cx + radius * np.cos(t), cy + radius * np.sin(t)], axis=-1)

        def der(t):
            t = np.asarray(t, dtype=float)
            return np.stack([-radius * np.sin(t), radius * np.cos(t)], axis=-1)

        return cls(pos, der, 0.0, 2 * np.pi, name)

    def __call__(self, theta):
        return self.position(theta)

    def tangent(self, theta):
        return self.derivative(theta)

    def _orientation(self):
        t = self.t0 + self.period * np.linspace(0, 1, 2001)[:-1]
        x, y = self.position(t).T
        return np.sign(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def normal(self, theta):
        """Unit outward normal."""
        d = np.atleast_2d(self.derivative(theta))
        n = np.column_stack([d[:, 1], -d[:, 0]]) * self._orientation()
        return n / np.linalg.norm(n, axis=1)[:, None]

    def _arclength_table(self, n=20000):
        t = self.t0 + self.period * np.linspace(0.0, 1.0, n + 1)
        x = self.position(t)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(x, axis=0), axis=1))])
        return t, s

    def length(self):
        return self._arclength_table()[1][-1]

    def polygon(self, n_segments):
        """Counter-clockwise polyline with vertices on the curve, equally spaced in arc length."""
        n_segments = int(n_segments)
        if n_segments < 3:
            raise GeometryError("need at least 3 boundary segments")
        t, s = self._arclength_table(max(20000, 20 * n_segments))
        targets = s[-1] * np.arange(n_segments) / n_segments
        theta = np.interp(targets, s, t)
        verts = np.asarray(self.position(theta), dtype=float)
        if _signed_area(verts) < 0:
            verts = verts[::-1].copy()
        return verts

    def area(self, n_segments=100000):
        return _signed_area(self.polygon(n_segments))

    def is_simple(self, n_segments=4000):
        return bool(shapely.LinearRing(self.polygon(n_segments)).is_simple)

    def bbox(self, n=4000):
        v = self.polygon(n)
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())


BEAN_THETA = np.array([0.0, np.pi / 20, np.pi / 4, np.pi / 2, np.pi, 3 * np.pi / 2, 2 * np.pi])
BEAN_POINTS = np.array([(1.0, 0.0), (0.7, -0.1), (0.1, 0.1), (-0.3, 0.7),
                        (-0.8, 0.0), (0.0, -0.8), (1.0, 0.0)])


def bean_domain():
    """The bean-shaped benchmark curve (periodic cubic spline, angular parameters)."""
    return BoundaryCurve.from_points(BEAN_THETA, BEAN_POINTS, name="bean")


def circle_domain(center=(0.0, 0.0), radius=0.75):
    return BoundaryCurve.circle(center, radius)


CONE_CIRCLE_CENTER = (0.5, 0.5)
CONE_CIRCLE_RADIUS = 0.35


def cone_circle_domain():
    """Circular trim curve inside the unit-square reference domain of ``cone_map``."""
    return BoundaryCurve.circle(CONE_CIRCLE_CENTER, CONE_CIRCLE_RADIUS, name="cone-circle")


def load_curve_json(path):
    """Read a periodic spline boundary from JSON.

    Accepts ``[[theta, x, y], ...]`` or ``[{"theta":..., "x":..., "y":...}, ...]``,
    optionally wrapped as ``{"points": [...]}``.
    """
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("points", data)
    try:
        if isinstance(data[0], dict):
            rec = np.array([[d["theta"], d["x"], d["y"]] for d in data], dtype=float)
        else:
            rec = np.array(data, dtype=float)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed curve file {path}: {exc}") from exc
    if rec.ndim != 2 or rec.shape[1] != 3:
        raise GeometryError(f"malformed curve file {path}: expected (theta, x, y) records")
    return BoundaryCurve.from_points(rec[:, 0], rec[:, 1:], name=str(path))


def named_domain(name):
    if name == "bean":
        return bean_domain()
    if name == "circle":
        return circle_domain()
    if name == "cone-circle":
        return cone_circle_domain()
    if str(name).endswith(".json"):
        return load_curve_json(name)
    raise GeometryError(f"unknown domain {name!r}")


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass
class CutCell:
    element: int
    classification: str
    area: float
    centroid: np.ndarray
    polygons: list
    volume_points: np.ndarray
    volume_weights: np.ndarray
    boundary_points: np.ndarray
    boundary_weights: np.ndarray
    boundary_normals: np.ndarray


@dataclass
class QuadRule:
    """Points grouped by active element: rows ``ptr[k]:ptr[k+1]`` belong to element k."""

    ptr: np.ndarray
    points: np.ndarray
    local: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None

    @property
    def element_of_point(self):
        return np.repeat(np.arange(self.ptr.size - 1), np.diff(self.ptr))


@dataclass
class TrimmedDomain:
    """Result of classifying a polygonal domain against a background mesh."""

    mesh: BackgroundMesh
    vertices: np.ndarray
    quad_order: int
    status: np.ndarray
    area: np.ndarray
    centroid: np.ndarray
    clip: dict = field(repr=False)
    cut_points: dict = field(repr=False)
    cut_weights: dict = field(repr=False)
    seg_elem: np.ndarray = field(repr=False)
    seg_a: np.ndarray = field(repr=False)
    seg_b: np.ndarray = field(repr=False)
    seg_normal: np.ndarray = field(repr=False)

    @property
    def bbox(self):
        v = self.vertices
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    @property
    def polygon_area(self):
        return _signed_area(self.vertices)

    def classification(self, e):
        return _LABELS[int(self.status[e])]

    def _boundary_of(self, e):
        sel = np.nonzero(self.seg_elem == e)[0]
        return self._line_rule(sel)

    def _line_rule(self, sel):
        n = npoints_for_degree(self.quad_order)
        x, w = gauss_01(n)
        a = self.seg_a[sel]
        b = self.seg_b[sel]
        L = np.linalg.norm(b - a, axis=1)
        pts = a[:, None, :] + x[None, :, None] * (b - a)[:, None, :]
        wts = L[:, None] * w[None, :]
        nrm = np.repeat(self.seg_normal[sel], n, axis=0)
        return pts.reshape(-1, 2), wts.ravel(), nrm

    def _volume_of(self, e):
        if self.status[e] == INSIDE:
            pts, w = tensor_gauss_01(npoints_for_degree(self.quad_order))
            ll = self.mesh.element_lower_left(e)
            return ll + self.mesh.h * pts, w * self.mesh.h ** 2
        if self.status[e] == CUT:
            return self.cut_points[e], self.cut_weights[e]
        return np.zeros((0, 2)), np.zeros(0)

    def cell(self, e):
        e = int(e)
        vp, vw = self._volume_of(e)
        bp, bw, bn = self._boundary_of(e)
        if self.status[e] == INSIDE:
            polys = [np.array(self.mesh.element_box(e))[[0, 2, 2, 0, 1, 1, 3, 3]].reshape(2, 4).T]
        else:
            polys = self.clip.get(e, [])
        return CutCell(e, self.classification(e), float(self.area[e]), self.centroid[e],
                       polys, vp, vw, bp, bw, bn)

    def cells(self):
        return [self.cell(e) for e in range(self.mesh.n_elements)]

    def volume_rule(self, elements):
        """Volume quadrature on T cap Omega for the given elements (in order)."""
        elements = np.asarray(elements)
        h = self.mesh.h
        ref, rw = tensor_gauss_01(npoints_for_degree(self.quad_order))
        counts = np.empty(elements.size, dtype=np.int64)
        pts, wts, loc = [], [], []
        for k, e in enumerate(elements):
            if self.status[e] == INSIDE:
                ll = self.mesh.element_lower_left(e)
                pts.append(ll + h * ref)
                loc.append(ref)
                wts.append(rw * h * h)
            elif self.status[e] == CUT:
                p = self.cut_points[e]
                pts.append(p)
                loc.append((p - self.mesh.element_lower_left(e)) / h)
                wts.append(self.cut_weights[e])
            else:
                pts.append(np.zeros((0, 2)))
                loc.append(np.zeros((0, 2)))
                wts.append(np.zeros(0))
            counts[k] = wts[-1].size
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return QuadRule(ptr, np.concatenate(pts), np.concatenate(loc), np.concatenate(wts))

    def boundary_rule(self, elements):
        """Boundary quadrature on the polyline pieces assigned to each element."""
        elements = np.asarray(elements)
        pos = np.full(self.mesh.n_elements, -1, dtype=np.int64)
        pos[elements] = np.arange(elements.size)
        owner = pos[self.seg_elem]
        if np.any(owner < 0):
            raise GeometryError("boundary segment assigned to an element outside the list")
        order = np.argsort(owner, kind="stable")
        pts, wts, nrm = self._line_rule(order)
        n = npoints_for_degree(self.quad_order)
        counts = np.bincount(owner, minlength=elements.size) * n
        ptr = np.concatenate([[0], np.cumsum(counts)])
        eop = np.repeat(elements, counts)
        loc = (pts - self.mesh.element_lower_left(eop)) / self.mesh.h
        return QuadRule(ptr, pts, loc, wts, nrm)

    def boundary_length_ratio(self):
        """max over elements of |dOmega cap T| / h."""
        L = np.linalg.norm(self.seg_b - self.seg_a, axis=1)
        per = np.bincount(self.seg_elem, weights=L, minlength=self.mesh.n_elements)
        return float(per.max() / self.mesh.h)

    def contains(self, x):
        poly = shapely.Polygon(self.vertices)
        x = np.atleast_2d(x)
        return shapely.contains_xy(poly, x[:, 0], x[:, 1])


def default_segments(curve, h, per_crossing=8, minimum=400):
    return max(minimum, int(np.ceil(per_crossing * curve.length() / h)))


def classify_and_clip(curve, mesh, quad_order, n_segments=None):
    """Classify all background elements against the polygonal approximation of ``curve``.

    ``curve`` may be a BoundaryCurve or an (n, 2) vertex array.  Cut elements get
    an exact polygon clip, a triangulated volume rule exact to total degree
    ``quad_order`` and boundary rules on the polyline pieces inside them.
    """
    if isinstance(curve, BoundaryCurve):
        if n_segments is None:
            n_segments = default_segments(curve, mesh.h)
        verts = curve.polygon(n_segments)
    else:
        verts = np.asarray(curve, dtype=float)
        if _signed_area(verts) < 0:
            verts = verts[::-1].copy()
    quad_order = int(quad_order)
    h = mesh.h
    poly = shapely.Polygon(verts)
    if not poly.is_valid:
        raise GeometryError("boundary polygon is not simple")
    shapely.prepare(poly)

    ne = mesh.n_elements
    status = np.zeros(ne, dtype=np.int8)
    area = np.zeros(ne)
    centroid = mesh.element_centers().copy()

    xmin, ymin, xmax, ymax = poly.bounds
    x0, y0 = mesh.corner
    ix0 = max(int(np.floor((xmin - x0) / h)) - 1, 0)
    ix1 = min(int(np.floor((xmax - x0) / h)) + 1, mesh.nx - 1)
    iy0 = max(int(np.floor((ymin - y0) / h)) - 1, 0)
    iy1 = min(int(np.floor((ymax - y0) / h)) + 1, mesh.ny - 1)
    IX, IY = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
    cand = mesh.element_id(IX.ravel(), IY.ravel())
    bx0, by0, bx1, by1 = mesh.element_box(cand)
    boxes = shapely.box(bx0, by0, bx1, by1)

    inside = shapely.contains_properly(poly, boxes)
    status[cand[inside]] = INSIDE
    area[cand[inside]] = h * h
    touch = shapely.intersects(poly, boxes) & ~inside
    te = cand[touch]
    inter = shapely.intersection(poly, boxes[touch])
    ta = shapely.area(inter)
    full = np.abs(ta - h * h) <= AREA_FLOOR * h * h
    cutm = (ta > AREA_FLOOR * h * h) & ~full
    status[te[full]] = INSIDE
    area[te[full]] = h * h
    status[te[cutm]] = CUT
    area[te[cutm]] = ta[cutm]

    clip, cut_pts, cut_wts = {}, {}, {}
    cut_e = te[cutm]
    cut_geo = inter[cutm]
    if cut_e.size:
        c = shapely.get_coordinates(shapely.centroid(cut_geo))
        centroid[cut_e] = c
        tris = shapely.constrained_delaunay_triangles(cut_geo)
        parts, idx = shapely.get_parts(tris, return_index=True)
        parts_area = shapely.area(parts)
        keep = parts_area > 0
        parts, idx = parts[keep], idx[keep]
        coords = shapely.get_coordinates(shapely.get_exterior_ring(parts)).reshape(-1, 4, 2)[:, :3]
        order = np.argsort(idx, kind="stable")
        idx = idx[order]
        coords = coords[order]
        bounds = np.searchsorted(idx, np.arange(cut_e.size + 1))
        for k, e in enumerate(cut_e):
            tri = coords[bounds[k]:bounds[k + 1]]
            pts, wts = triangle_rule(tri, quad_order)
            cut_pts[int(e)] = pts
            cut_wts[int(e)] = wts
            g = cut_geo[k]
            clip[int(e)] = [np.asarray(q.exterior.coords)[:-1]
                            for q in shapely.get_parts(g) if q.geom_type == "Polygon" and q.area > 0]

    seg_elem, seg_a, seg_b, seg_n = _split_boundary(verts, mesh, status)
    return TrimmedDomain(mesh, verts, quad_order, status, area, centroid, clip, cut_pts,
                         cut_wts, seg_elem, seg_a, seg_b, seg_n)


def _split_boundary(verts, mesh, status):
    """Split polygon edges at mesh lines; assign each piece to the element on Omega's side."""
    h = mesh.h
    x0, y0 = mesh.corner
    A = verts
    B = np.roll(verts, -1, axis=0)
    d = B - A
    L = np.linalg.norm(d, axis=1)
    nrm = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]  # outward for CCW
    ua = (A - (x0, y0)) / h
    ub = (B - (x0, y0)) / h
    pa, pb, pn = [], [], []
    for k in range(len(A)):
        ts = [0.0, 1.0]
        for ax in (0, 1):
            lo, hi = sorted((ua[k, ax], ub[k, ax]))
            m0, m1 = int(np.ceil(lo)), int(np.floor(hi))
            if m1 >= m0 and hi > lo:
                for m in range(m0, m1 + 1):
                    t = (m - ua[k, ax]) / (ub[k, ax] - ua[k, ax])
                    if 0.0 < t < 1.0:
                        ts.append(t)
        ts = np.unique(ts)
        pts = A[k] + ts[:, None] * d[k]
        pa.append(pts[:-1])
        pb.append(pts[1:])
        pn.append(np.repeat(nrm[k:k + 1], len(ts) - 1, axis=0))
    sa = np.concatenate(pa)
    sb = np.concatenate(pb)
    sn = np.concatenate(pn)
    keep = np.linalg.norm(sb - sa, axis=1) > 1e-15 * h
    sa, sb, sn = sa[keep], sb[keep], sn[keep]
    mid = 0.5 * (sa + sb)
    u = (mid - (x0, y0)) / h
    idx = np.floor(u).astype(np.int64)
    on_line = np.abs(u - np.round(u)) < 1e-9
    inward = -sn
    for ax in (0, 1):
        m = on_line[:, ax]
        r = np.round(u[m, ax]).astype(np.int64)
        idx[m, ax] = np.where(inward[m, ax] > 0, r, r - 1)
    idx[:, 0] = np.clip(idx[:, 0], 0, mesh.nx - 1)
    idx[:, 1] = np.clip(idx[:, 1], 0, mesh.ny - 1)
    elem = mesh.element_id(idx[:, 0], idx[:, 1])
    bad = np.nonzero(status[elem] == OUTSIDE)[0]
    for k in bad:
        # piece on a zero-area contact; hand it to an active neighbour touching it
        cands = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                jx, jy = idx[k, 0] + dx, idx[k, 1] + dy
                if 0 <= jx < mesh.nx and 0 <= jy < mesh.ny:
                    e = int(mesh.element_id(jx, jy))
                    b = mesh.element_box(e)
                    tol = 1e-9 * h
                    if (status[e] != OUTSIDE and b[0] - tol <= mid[k, 0] <= b[2] + tol
                            and b[1] - tol <= mid[k, 1] <= b[3] + tol):
                        cands.append(e)
        if not cands:
            raise GeometryError(f"boundary piece at {mid[k]} has no active element")
        elem[k] = min(cands)
    return elem, sa, sb, sn


@dataclass(frozen=True)
class SurfaceMap:
    """Smooth map of the reference plane into R^3."""

    phi: Callable
    jac: Callable
    name: str = "map"

    def __call__(self, x):
        return self.phi(np.atleast_2d(x))

    def jacobian(self, x):
        return self.jac(np.atleast_2d(x))

    def metric(self, x):
        J = self.jacobian(x)
        return np.einsum("nki,nkj->nij", J, J)

    def metric_data(self, x):
        """(sqrt(det G), G^{-1}) at points x; raises GeometryError where G is not SPD."""
        G = self.metric(x)
        det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
        bad = (det <= 0) | (G[:, 0, 0] <= 0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise GeometryError(f"metric not positive definite at {np.atleast_2d(x)[k]}")
        inv = np.empty_like(G)
        inv[:, 0, 0] = G[:, 1, 1] / det
        inv[:, 1, 1] = G[:, 0, 0] / det
        inv[:, 0, 1] = -G[:, 0, 1] / det
        inv[:, 1, 0] = -G[:, 1, 0] / det
        return np.sqrt(det), inv

    def laplace_beltrami(self, x, grad, hess, step=1e-5):
        """Apply the pulled-back Laplace-Beltrami operator to a function with known
        gradient (n,2) and Hessian (n,2,2) at points x; metric derivatives are
        central differences."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sg, Gi = self.metric_data(x)
        div = np.zeros((len(x), 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            sp, Gp = self.metric_data(x + e)
            sm, Gm = self.metric_data(x - e)
            div += ((sp[:, None] * Gp[:, i, :]) - (sm[:, None] * Gm[:, i, :])) / (2 * step)
        return np.einsum("nij,nij->n", Gi, hess) + np.einsum("nj,nj->n", div, grad) / sg


def identity_map():
    def phi(x):
        return np.column_stack([x[:, 0], x[:, 1], np.zeros(len(x))])

    def jac(x):
        J = np.zeros((len(x), 3, 2))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        return J

    return SurfaceMap(phi, jac, "identity")


def cone_map(r0=0.5, r1=1.5, height=1.0, opening=np.pi):
    """Unit square onto a truncated cone: u sweeps the angle, v runs along the generator."""

    def phi(x):
        r = r0 + (r1 - r0) * x[:, 1]
        a = opening * x[:, 0]
        return np.column_stack([r * np.cos(a), r * np.sin(a), height * x[:, 1]])

    def jac(x):
        r = r0 + (r1 - r0) * x[:, 1]
        a = opening * x[:, 0]
        J = np.zeros((len(x), 3, 2))
        J[:, 0, 0] = -opening * r * np.sin(a)
        J[:, 1, 0] = opening * r * np.cos(a)
        J[:, 0, 1] = (r1 - r0) * np.cos(a)
        J[:, 1, 1] = (r1 - r0) * np.sin(a)
        J[:, 2, 1] = height
        return J

    return SurfaceMap(phi, jac, "cone")
