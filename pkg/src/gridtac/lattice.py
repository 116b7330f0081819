"""Lattice spring model of the multi-layer grid elastomer.

The printed grid is tiled into rectangular cells. Cell corners form the
structural skeleton (axis-aligned Hookean springs along every cell edge);
each cell also has a center node tied to its 8 corners by diagonal springs
for shear stability. The camera-side (top) corner layer is fixed; a rigid
indenter presses the free bottom surface by a commanded depth and lateral
shear, imposing displacement boundary conditions on the contacted nodes.
Static equilibrium minimizes total spring energy

    E(u) = sum over springs of 1/2 k (|p_i + u_i - p_j - u_j| - L0)^2

with geometric (rotated) rest lengths, so large displacements stay
well-posed without material nonlinearity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger("gridtac.lattice")


@dataclass(frozen=True)
class LatticeConfig:
    nx: int = 12
    ny: int = 16
    nz: int = 6
    dx: float = 0.8
    dy: float = 0.8
    dz: float = 0.8
    k_struct: float = 1.0
    k_diag: float | None = None  # default k_struct / 2
    skin_thickness: float = 0.5
    top_fixed: bool = True

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("dx", "dy", "dz", "k_struct", "skin_thickness"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.k_diag is not None and self.k_diag < 0:
            raise ValueError(f"k_diag must be >= 0, got {self.k_diag}")

    @property
    def diag_stiffness(self) -> float:
        return self.k_struct / 2.0 if self.k_diag is None else self.k_diag


@dataclass(frozen=True)
class Indenter:
    """Rigid probe pressing the free (bottom) surface from outside.

    depth is penetration in mm past first contact; shear drags the
    contacted surface laterally. Contact nodes are selected by vertical
    projection of the indenter profile.
    """

    shape: str = "sphere"  # sphere | cylinder | plane
    radius: float = 4.0
    axis: str = "y"  # cylinder run direction
    center: tuple[float, float] = (0.0, 0.0)
    depth: float = 0.0
    shear: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("sphere", "cylinder", "plane"):
            raise ValueError(f"unknown indenter shape {self.shape!r}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.shape != "plane" and self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if self.axis not in ("x", "y"):
            raise ValueError(f"cylinder axis must be x or y, got {self.axis!r}")

    def profile(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vertical push-in (mm, >= 0) at surface points (x, y)."""
        if self.shape == "plane":
            return np.full_like(np.asarray(x, dtype=np.float64), self.depth)
        if self.shape == "sphere":
            rho2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        elif self.axis == "x":  # runs along x, curvature across y
            rho2 = (y - self.center[1]) ** 2
        else:
            rho2 = (x - self.center[0]) ** 2
        r = self.radius
        inside = rho2 < r * r
        lift = np.zeros_like(rho2)
        # sphere tip at depth below surface: push = depth - r + sqrt(r^2 - rho^2)
        lift[inside] = self.depth - r + np.sqrt(r * r - rho2[inside])
        return np.maximum(lift, 0.0)


@dataclass(frozen=True)
class Lattice:
    cfg: LatticeConfig
    rest: np.ndarray = field(repr=False)  # (n_nodes, 3) mm
    fixed: np.ndarray = field(repr=False)  # (n_nodes,) bool
    spring_i: np.ndarray = field(repr=False)
    spring_j: np.ndarray = field(repr=False)
    spring_k: np.ndarray = field(repr=False)
    spring_rest: np.ndarray = field(repr=False)
    cell_springs: tuple[tuple[int, ...], ...] = field(repr=False)  # per-cell indices

    @property
    def n_nodes(self) -> int:
        return self.rest.shape[0]

    @property
    def n_springs(self) -> int:
        return self.spring_i.shape[0]

    def corner_index(self, m: int, n: int, l: int) -> int:
        c = self.cfg
        return (m * (c.ny + 1) + n) * (c.nz + 1) + l

    def bottom_corner_indices(self) -> np.ndarray:
        c = self.cfg
        idx = [
            self.corner_index(m, n, 0)
            for m in range(c.nx + 1)
            for n in range(c.ny + 1)
        ]
        return np.array(idx, dtype=np.int64)


@dataclass(frozen=True)
class DeformationField:
    u: np.ndarray  # (n_nodes, 3) mm
    residual: float  # max unbalanced force on free nodes
    contact_nodes: np.ndarray  # constrained by the indenter this solve


class SolveError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


def build_lattice(cfg: LatticeConfig | None = None) -> Lattice:
    """Construct nodes and deduplicated springs for the configured grid."""
    cfg = cfg or LatticeConfig()
    nx, ny, nz = cfg.nx, cfg.ny, cfg.nz

    def corner(m, n, l):
        return (m * (ny + 1) + n) * (nz + 1) + l

    n_corners = (nx + 1) * (ny + 1) * (nz + 1)

    def center(m, n, l):
        return n_corners + (m * ny + n) * nz + l

    n_nodes = n_corners + nx * ny * nz
    rest = np.zeros((n_nodes, 3))
    for m in range(nx + 1):
        for n in range(ny + 1):
            for l in range(nz + 1):
                rest[corner(m, n, l)] = (m * cfg.dx, n * cfg.dy, l * cfg.dz)
    for m in range(nx):
        for n in range(ny):
            for l in range(nz):
                rest[center(m, n, l)] = (
                    (m + 0.5) * cfg.dx,
                    (n + 0.5) * cfg.dy,
                    (l + 0.5) * cfg.dz,
                )

    fixed = np.zeros(n_nodes, dtype=bool)
    if cfg.top_fixed:
        for m in range(nx + 1):
            for n in range(ny + 1):
                fixed[corner(m, n, nz)] = True

    si, sj, sk = [], [], []
    spring_of = {}

    def add_spring(i, j, k):
        key = (i, j) if i < j else (j, i)
        if key in spring_of:
            return spring_of[key]
        if k == 0.0:
            return None  # zero-stiffness springs are omitted entirely
        spring_of[key] = len(si)
        si.append(key[0])
        sj.append(key[1])
        sk.append(k)
        return spring_of[key]

    k_d = cfg.diag_stiffness
    cell_springs = []
    for m in range(nx):
        for n in range(ny):
            for l in range(nz):
                corners = [
                    corner(m + a, n + b, l + c)
                    for a in (0, 1)
                    for b in (0, 1)
                    for c in (0, 1)
                ]
                members = []
                # 12 axis-aligned edges of the cell box
                for a in (0, 1):
                    for b in (0, 1):
                        members.append(add_spring(corner(m, n + a, l + b), corner(m + 1, n + a, l + b), cfg.k_struct))
                        members.append(add_spring(corner(m + a, n, l + b), corner(m + a, n + 1, l + b), cfg.k_struct))
                        members.append(add_spring(corner(m + a, n + b, l), corner(m + a, n + b, l + 1), cfg.k_struct))
                # 8 center-to-corner diagonals
                ctr = center(m, n, l)
                for c_idx in corners:
                    members.append(add_spring(ctr, c_idx, k_d))
                cell_springs.append(tuple(s for s in members if s is not None))

    spring_i = np.array(si, dtype=np.int64)
    spring_j = np.array(sj, dtype=np.int64)
    spring_k = np.array(sk, dtype=np.float64)
    spring_rest = np.linalg.norm(rest[spring_i] - rest[spring_j], axis=1)
    log.debug("lattice built: %d nodes, %d springs", n_nodes, len(si))
    return Lattice(
        cfg=cfg,
        rest=rest,
        fixed=fixed,
        spring_i=spring_i,
        spring_j=spring_j,
        spring_k=spring_k,
        spring_rest=spring_rest,
        cell_springs=tuple(cell_springs),
    )


def _energy_grad_full(lat: Lattice, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Total spring energy and its gradient w.r.t. every node displacement."""
    pos = lat.rest + u
    d = pos[lat.spring_i] - pos[lat.spring_j]
    length = np.linalg.norm(d, axis=1)
    length = np.maximum(length, 1e-12)
    stretch = length - lat.spring_rest
    energy = 0.5 * np.dot(lat.spring_k, stretch * stretch)
    coef = (lat.spring_k * stretch / length)[:, None] * d
    grad = np.zeros((lat.n_nodes, 3))
    np.add.at(grad, lat.spring_i, coef)
    np.add.at(grad, lat.spring_j, -coef)
    return float(energy), grad


def _objective(u_flat: np.ndarray, lat: Lattice, constrained_u: np.ndarray,
               free_idx: np.ndarray):
    """Energy and free-DOF gradient, shaped for scipy's minimizer."""
    u = constrained_u.copy()
    u[free_idx] = u_flat.reshape(-1, 3)
    energy, grad = _energy_grad_full(lat, u)
    return energy, grad[free_idx].ravel()


def contact_targets(lat: Lattice, ind: Indenter) -> tuple[np.ndarray, np.ndarray]:
    """Bottom-surface nodes the indenter constrains, and their u targets."""
    bottom = lat.bottom_corner_indices()
    xy = lat.rest[bottom]
    lift = ind.profile(xy[:, 0], xy[:, 1])
    if ind.shape == "plane":
        touched = np.ones(bottom.shape, dtype=bool)  # full-face platen contact
    else:
        touched = lift > 0.0
    nodes = bottom[touched]
    targets = np.zeros((nodes.shape[0], 3))
    targets[:, 0] = ind.shear[0]
    targets[:, 1] = ind.shear[1]
    targets[:, 2] = lift[touched]
    return nodes, targets


def solve_static(
    lat: Lattice,
    ind: Indenter,
    tol: float | None = None,
    initial: DeformationField | None = None,
) -> DeformationField:
    """Minimize spring energy under the indenter displacement constraints.

    Returns the displacement field with max residual force <= tol on free
    nodes, or raises SolveError carrying the best residual reached.
    """
    if tol is None:
        tol = 1e-6 * lat.cfg.k_struct * lat.cfg.dx
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")

    nodes, targets = contact_targets(lat, ind)
    constrained_u = np.zeros((lat.n_nodes, 3))
    constrained_u[nodes] = targets
    pinned = lat.fixed.copy()
    pinned[nodes] = True
    free_idx = np.where(~pinned)[0]

    def residual_at(x: np.ndarray) -> float:
        u = constrained_u.copy()
        u[free_idx] = x.reshape(-1, 3)
        _, grad = _energy_grad_full(lat, u)
        return _max_force(grad, free_idx)

    if free_idx.size == 0 or (ind.depth == 0.0 and ind.shear == (0.0, 0.0)):
        residual = residual_at(np.zeros(free_idx.size * 3))
        return DeformationField(
            u=constrained_u, residual=residual, contact_nodes=nodes
        )

    x0 = np.zeros(free_idx.size * 3)
    if initial is not None and initial.u.shape == (lat.n_nodes, 3):
        x0 = initial.u[free_idx].ravel()

    best_x = x0
    best_res = math.inf
    for attempt in range(3):
        result = minimize(
            _objective,
            best_x,
            args=(lat, constrained_u, free_idx),
            method="L-BFGS-B",
            jac=True,
            options={"maxiter": 20000, "maxfun": 50000, "gtol": tol * 0.05, "ftol": 1e-16},
        )
        residual = residual_at(result.x)
        if residual < best_res:
            best_res = residual
            best_x = result.x
        if best_res <= tol:
            break
        log.debug("solve attempt %d residual %.3e > tol %.3e", attempt, best_res, tol)
    if best_res > tol:
        raise SolveError(
            f"static solve did not reach tol {tol:.3e}; best residual {best_res:.3e}",
            best_residual=best_res,
        )
    u = constrained_u.copy()
    u[free_idx] = best_x.reshape(-1, 3)
    return DeformationField(u=u, residual=best_res, contact_nodes=nodes)


def _max_force(grad: np.ndarray, free_idx: np.ndarray) -> float:
    if free_idx.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(grad[free_idx], axis=1)))


def spring_stretch(lat: Lattice, fld: DeformationField) -> np.ndarray:
    pos = lat.rest + fld.u
    length = np.linalg.norm(pos[lat.spring_i] - pos[lat.spring_j], axis=1)
    return length - lat.spring_rest


def cell_strain(lat: Lattice, fld: DeformationField) -> np.ndarray:
    """Per-cell mean |relative elongation| of the cell's member springs.

    Shaped (nx, ny, nz); zero at rest; consumed by the renderer.
    """
    stretch = spring_stretch(lat, fld)
    rel = np.abs(stretch) / lat.spring_rest
    c = lat.cfg
    out = np.zeros(len(lat.cell_springs))
    for idx, members in enumerate(lat.cell_springs):
        if members:
            out[idx] = float(np.mean(rel[list(members)]))
    return out.reshape(c.nx, c.ny, c.nz)


def reaction_force(lat: Lattice, fld: DeformationField) -> np.ndarray:
    """Net spring force transmitted through the indenter-contact nodes.

    Sign convention: positive z for a straight push of depth d (series
    chain gives (0, 0, k_eff * d)); tangential components carry the sign
    of the commanded shear.
    """
    if fld.contact_nodes.size == 0:
        return np.zeros(3)
    _, grad = _energy_grad_full(lat, fld.u)
    return grad[fld.contact_nodes].sum(axis=0)


def export_lattice(lat: Lattice, fld: DeformationField | None, path) -> None:
    """Plain-text dump: one node/spring/displacement record per line."""
    lines = []
    for i in range(lat.n_nodes):
        x, y, z = lat.rest[i]
        lines.append(f"node {i} {x!r} {y!r} {z!r} {int(lat.fixed[i])}")
    for s in range(lat.n_springs):
        lines.append(
            f"spring {lat.spring_i[s]} {lat.spring_j[s]} "
            f"{lat.spring_rest[s]!r} {lat.spring_k[s]!r}"
        )
    if fld is not None:
        for i in range(lat.n_nodes):
            ux, uy, uz = fld.u[i]
            lines.append(f"disp {i} {ux!r} {uy!r} {uz!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
