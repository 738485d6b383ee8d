"""Geometry and function-space layer.

Rectangle domain with a uniform node grid, the Neumann Laplacian cosine
eigenbasis, grid/spectral transforms, interior restriction, boundary trace,
target extension from a boundary segment into an adjacent interior
rectangle, and actuator spatial profiles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RectDomain",
    "SpectralBasis",
    "Field",
    "GridPatch",
    "BoundaryProfile",
    "Region",
    "Actuator",
    "build_basis",
    "restrict",
    "trace",
    "extend_target",
    "actuator_coefficients",
]

_SIDES = ("left", "right", "bottom", "top")
_SNAP = 1e-9


@dataclass(frozen=True)
class RectDomain:
    """Axis-aligned rectangle ]0,lx[ x ]0,ly[ with a uniform node grid."""

    lx: float = 1.0
    ly: float = 1.0
    nx: int = 51
    ny: int = 51

    def __post_init__(self):
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise ValueError("domain side lengths must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs at least 8 nodes per axis")

    @property
    def x(self):
        return np.linspace(0.0, self.lx, self.nx)

    @property
    def y(self):
        return np.linspace(0.0, self.ly, self.ny)

    @property
    def dx(self):
        return self.lx / (self.nx - 1)

    @property
    def dy(self):
        return self.ly / (self.ny - 1)

    def quad_weights(self):
        """Trapezoid weights (wx, wy) for the discrete L2 inner product."""
        wx = np.full(self.nx, self.dx)
        wx[0] = wx[-1] = 0.5 * self.dx
        wy = np.full(self.ny, self.dy)
        wy[0] = wy[-1] = 0.5 * self.dy
        return wx, wy


def _cos_rows(m, length, coords):
    """Rows k < m of the normalized Neumann cosine family on [0, length]."""
    rows = np.empty((m, coords.size))
    rows[0] = 1.0 / math.sqrt(length)
    k = np.arange(1, m)[:, None]
    rows[1:] = math.sqrt(2.0 / length) * np.cos(
        k * np.pi * coords[None, :] / length
    )
    return rows


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated Neumann eigenbasis e_ij(x,y) = c_i cos(i pi x / lx) *
    c_j cos(j pi y / ly), listed in (i, j) lexicographic order."""

    domain: RectDomain
    mx: int
    my: int

    @property
    def modes(self):
        return [(i, j) for i in range(self.mx) for j in range(self.my)]

    @property
    def eigenvalues(self):
        i = np.arange(self.mx)
        j = np.arange(self.my)
        lam = (i[:, None] * np.pi / self.domain.lx) ** 2 + (
            j[None, :] * np.pi / self.domain.ly
        ) ** 2
        return lam.ravel()

    def _factors(self):
        d = self.domain
        ex = _cos_rows(self.mx, d.lx, d.x)
        ey = _cos_rows(self.my, d.ly, d.y)
        return ex, ey

    def to_spectral(self, values):
        """Coefficients c_ij = <f, e_ij> by trapezoid quadrature (exact for
        modes below the grid Nyquist index)."""
        values = np.asarray(values, dtype=float)
        d = self.domain
        if values.shape != (d.nx, d.ny):
            raise ValueError(
                f"expected nodal array of shape {(d.nx, d.ny)}, "
                f"got {values.shape}"
            )
        wx, wy = d.quad_weights()
        ex, ey = self._factors()
        return (ex * wx) @ values @ (ey * wy).T

    def from_spectral(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.mx, self.my):
            raise ValueError(
                f"expected coefficient array of shape {(self.mx, self.my)}, "
                f"got {coeffs.shape}"
            )
        ex, ey = self._factors()
        return ex.T @ coeffs @ ey

    def evaluate_mode(self, i, j, x, y):
        """Point values e_ij(x, y) (arrays broadcast)."""
        d = self.domain
        cx = 1.0 / math.sqrt(d.lx) if i == 0 else math.sqrt(2.0 / d.lx)
        cy = 1.0 / math.sqrt(d.ly) if j == 0 else math.sqrt(2.0 / d.ly)
        return (
            cx
            * np.cos(i * np.pi * np.asarray(x) / d.lx)
            * cy
            * np.cos(j * np.pi * np.asarray(y) / d.ly)
        )


def build_basis(domain, mx, my):
    """Construct the truncated Neumann cosine eigenbasis on the domain."""
    if mx < 1 or my < 1:
        raise ValueError("spectral truncation must keep at least one mode")
    if mx >= domain.nx - 1 or my >= domain.ny - 1:
        raise ValueError(
            "spectral truncation exceeds grid resolution; "
            "need mx < nx-1 and my < ny-1 for exact discrete orthogonality"
        )
    return SpectralBasis(domain=domain, mx=mx, my=my)


@dataclass
class Field:
    """Nodal values on the full domain grid, indexed [ix, iy]."""

    domain: RectDomain
    values: np.ndarray
    _coeff_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.domain.nx, self.domain.ny):
            raise ValueError(
                f"nodal array shape {self.values.shape} does not match grid "
                f"{(self.domain.nx, self.domain.ny)}"
            )

    @classmethod
    def from_function(cls, domain, fn):
        xx, yy = np.meshgrid(domain.x, domain.y, indexing="ij")
        return cls(domain, fn(xx, yy))

    @classmethod
    def zero(cls, domain):
        return cls(domain, np.zeros((domain.nx, domain.ny)))

    def coefficients(self, basis):
        key = (id(basis), basis.mx, basis.my)
        if key not in self._coeff_cache:
            self._coeff_cache[key] = basis.to_spectral(self.values)
        return self._coeff_cache[key]

    def norm_l2(self):
        wx, wy = self.domain.quad_weights()
        return math.sqrt(float(wx @ self.values**2 @ wy))


@dataclass(frozen=True)
class GridPatch:
    """Nodal values on a rectangular subset of the domain grid."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def norm_l2(self):
        wx = _patch_weights(self.x)
        wy = _patch_weights(self.y)
        return math.sqrt(float(wx @ self.values**2 @ wy))


@dataclass(frozen=True)
class BoundaryProfile:
    """Samples of a field along a boundary segment, parametrized by the
    tangential coordinate s."""

    s: np.ndarray
    values: np.ndarray

    def norm_l2(self):
        w = _patch_weights(self.s)
        return math.sqrt(float(w @ self.values**2))


def _patch_weights(coords):
    coords = np.asarray(coords)
    if coords.size == 1:
        return np.ones(1)
    h = coords[1] - coords[0]
    w = np.full(coords.size, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class Region:
    """Axis-aligned subregion: an interior rectangle or a boundary segment.

    Interior: bounds = (x0, x1, y0, y1).  Boundary: side in {left, right,
    bottom, top} and bounds = (s0, s1) along the tangential coordinate.
    """

    kind: str
    bounds: tuple
    side: str = ""

    @classmethod
    def interior(cls, x0, x1, y0, y1):
        if not (x0 < x1 and y0 < y1):
            raise ValueError("interior region must have positive area")
        return cls(kind="interior", bounds=(x0, x1, y0, y1))

    @classmethod
    def boundary(cls, side, s0, s1):
        if side not in _SIDES:
            raise ValueError(f"side must be one of {_SIDES}, got {side!r}")
        if not s0 < s1:
            raise ValueError("boundary segment must have positive length")
        return cls(kind="boundary", bounds=(s0, s1), side=side)

    def _check_inside(self, domain):
        if self.kind == "interior":
            x0, x1, y0, y1 = self.bounds
            if x0 < -_SNAP or x1 > domain.lx + _SNAP or y0 < -_SNAP or \
                    y1 > domain.ly + _SNAP:
                raise ValueError("interior region exceeds the domain")
        else:
            s0, s1 = self.bounds
            length = domain.ly if self.side in ("left", "right") else domain.lx
            if s0 < -_SNAP or s1 > length + _SNAP:
                raise ValueError("boundary segment exceeds the domain edge")


def _index_range(coords, lo, hi):
    idx = np.nonzero((coords >= lo - _SNAP) & (coords <= hi + _SNAP))[0]
    if idx.size == 0:
        raise ValueError(
            f"region [{lo}, {hi}] contains no grid nodes; refine the grid"
        )
    return idx


def restrict(fld, region):
    """Nodal restriction of a field to an interior rectangle (chi_omega)."""
    if region.kind != "interior":
        raise ValueError("restrict expects an interior region")
    region._check_inside(fld.domain)
    x0, x1, y0, y1 = region.bounds
    ix = _index_range(fld.domain.x, x0, x1)
    iy = _index_range(fld.domain.y, y0, y1)
    return GridPatch(
        x=fld.domain.x[ix],
        y=fld.domain.y[iy],
        values=fld.values[np.ix_(ix, iy)],
    )


def trace(fld, gamma):
    """Boundary-node samples of a field along a boundary segment
    (chi_Gamma composed with the boundary trace)."""
    if gamma.kind != "boundary":
        raise ValueError("trace expects a boundary region")
    gamma._check_inside(fld.domain)
    s0, s1 = gamma.bounds
    d = fld.domain
    if gamma.side in ("left", "right"):
        idx = _index_range(d.y, s0, s1)
        col = 0 if gamma.side == "left" else d.nx - 1
        return BoundaryProfile(s=d.y[idx], values=fld.values[col, idx])
    idx = _index_range(d.x, s0, s1)
    row = 0 if gamma.side == "bottom" else d.ny - 1
    return BoundaryProfile(s=d.x[idx], values=fld.values[idx, row])


def _validate_adjacency(domain, gamma, omega_c):
    """Check Gamma lies on the edge of omega_c that touches the boundary."""
    x0, x1, y0, y1 = omega_c.bounds
    s0, s1 = gamma.bounds
    edge = {
        "left": (x0, 0.0),
        "right": (x1, domain.lx),
        "bottom": (y0, 0.0),
        "top": (y1, domain.ly),
    }[gamma.side]
    tang = (y0, y1) if gamma.side in ("left", "right") else (x0, x1)
    if abs(edge[0] - edge[1]) > _SNAP:
        raise ValueError(
            f"the {gamma.side} edge of the interior region does not touch "
            "the domain boundary, so the boundary segment cannot lie on it"
        )
    if s0 < tang[0] - _SNAP or s1 > tang[1] + _SNAP:
        raise ValueError(
            "boundary segment is not contained in the interior region's edge"
        )


def _smooth_decay(t):
    """C1 cubic profile with value 1, slope 0 at t=0 and value 0 at t=1."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def extend_target(zd, omega_c, gamma, domain, profile=None):
    """Extend a boundary target from Gamma into omega_c (the operator R).

    The default extension is separable: the tangential trace (continued as
    a constant beyond the ends of Gamma) multiplied by a decay profile in
    the normal coordinate that equals 1 on Gamma — so the trace of the
    result reproduces zd at the grid nodes exactly — and falls smoothly to
    0 at the far face of omega_c.
    """
    if omega_c.kind != "interior" or gamma.kind != "boundary":
        raise ValueError("extend_target needs an interior region and a "
                         "boundary segment")
    omega_c._check_inside(domain)
    gamma._check_inside(domain)
    _validate_adjacency(domain, gamma, omega_c)
    if profile is None:
        profile = _smooth_decay

    x0, x1, y0, y1 = omega_c.bounds
    xs = domain.x[_index_range(domain.x, x0, x1)]
    ys = domain.y[_index_range(domain.y, y0, y1)]
    zd = np.asarray(zd, dtype=float)

    if gamma.side in ("left", "right"):
        tang, normal = ys, xs
        depth = (normal - x0) / (x1 - x0)
        if gamma.side == "right":
            depth = (x1 - normal) / (x1 - x0)
    else:
        tang, normal = xs, ys
        depth = (normal - y0) / (y1 - y0)
        if gamma.side == "top":
            depth = (y1 - normal) / (y1 - y0)

    gnodes = _index_range(tang, *gamma.bounds)
    if zd.shape != (gnodes.size,):
        raise ValueError(
            f"boundary target has {zd.size} samples but the segment holds "
            f"{gnodes.size} grid nodes"
        )
    # constant continuation beyond the ends of Gamma
    line = np.empty(tang.size)
    line[gnodes] = zd
    line[: gnodes[0]] = zd[0]
    line[gnodes[-1] + 1:] = zd[-1]

    decay = profile(depth)
    if gamma.side in ("left", "right"):
        values = decay[:, None] * line[None, :]
    else:
        values = line[:, None] * decay[None, :]
    return GridPatch(x=xs, y=ys, values=values)


@dataclass(frozen=True)
class Actuator:
    """Control input shape: distributed over a rectangle (zonal) or
    concentrated at a point (pointwise Dirac mass)."""

    kind: str
    support: tuple
    gain: float = 1.0

    @classmethod
    def zonal(cls, x0, x1, y0, y1, gain=1.0):
        if not (x0 < x1 and y0 < y1):
            raise ValueError("zonal support must have positive area")
        return cls(kind="zonal", support=(x0, x1, y0, y1), gain=gain)

    @classmethod
    def pointwise(cls, bx, by, gain=1.0):
        return cls(kind="pointwise", support=(bx, by), gain=gain)


def _cos_segment_integral(i, length, a, b):
    """Integral of the normalized cosine mode c_i cos(i pi s / length)
    over [a, b]."""
    if i == 0:
        return (b - a) / math.sqrt(length)
    k = i * math.pi / length
    return math.sqrt(2.0 / length) * (math.sin(k * b) - math.sin(k * a)) / k


def actuator_coefficients(act, basis):
    """Spectral coefficients b_ij = <B 1, e_ij> of the actuator shape.

    Zonal shapes use the exact closed-form cosine integrals over the
    support rectangle; a pointwise actuator contributes the eigenfunction
    values at its location (the truncation regularizes the Dirac mass).
    """
    d = basis.domain
    if act.kind == "zonal":
        x0, x1, y0, y1 = act.support
        if x0 < -_SNAP or x1 > d.lx + _SNAP or y0 < -_SNAP or \
                y1 > d.ly + _SNAP:
            raise ValueError("zonal support exceeds the domain")
        bx = np.array(
            [_cos_segment_integral(i, d.lx, x0, x1) for i in range(basis.mx)]
        )
        by = np.array(
            [_cos_segment_integral(j, d.ly, y0, y1) for j in range(basis.my)]
        )
    elif act.kind == "pointwise":
        px, py = act.support
        if not (0.0 <= px <= d.lx and 0.0 <= py <= d.ly):
            raise ValueError("pointwise actuator location outside the domain")
        bx = _cos_rows(basis.mx, d.lx, np.array([px]))[:, 0]
        by = _cos_rows(basis.my, d.ly, np.array([py]))[:, 0]
    else:
        raise ValueError(f"unknown actuator kind {act.kind!r}")
    return act.gain * np.outer(bx, by).ravel()
