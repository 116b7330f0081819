"""Synthetic sensor-frame renderer.

Physically motivated but deliberately phenomenological: instead of ray
tracing, the frame is a clamped sum of terms that reproduce the sensor's
observable statistics:

  * base grid image: translucent cell walls glow under three side lights;
    each wall family is exposed by each light according to the angle
    between wall normal and light azimuth, and each light carries its own
    falloff gradient across the sensor, so the three channels see the
    same geometry with different weights.
  * internal reflection: deformed cells gather light and brighten in
    proportion to projected cell strain.
  * skin glow: a light touch (penetration below the skin thickness)
    brightens the contact patch before the grid itself deforms; it fades
    out again as the probe seats fully.
  * contact darkening: pressing the skin onto the grid walls frustrates
    their internal reflection, so wall glow under the footprint dies off.
    This is what grid-similarity contact detection keys on.
  * transmitted object: an approaching object shows through the grid,
    blurred and attenuated with distance, shifted per channel by the
    parallax of that channel's light, and partially occluded by walls.
  * light-noise events: an external beam floods cell interiors (walls
    block most of it) with one shared spatial pattern across channels
    while the auto-exposure collapse dims every internal term.
  * sensor noise: a seeded static fixed-pattern component plus small
    per-frame temporal jitter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .frames import ChannelPlane, Frame, gaussian_kernel, round_u8, _convolve_rows
from .lattice import Indenter, LatticeConfig

log = logging.getLogger("gridtac.optics")


@dataclass(frozen=True)
class Light:
    azimuth_deg: float
    weights: tuple[float, float, float]  # r, g, b response in [0,1]
    intensity: float = 1.0

    def __post_init__(self):
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError(f"light weights must be in [0,1], got {self.weights}")
        if self.intensity < 0:
            raise ValueError("light intensity must be >= 0")


@dataclass(frozen=True)
class LightRig:
    lights: tuple[Light, ...] = (
        Light(0.0, (1.0, 0.0, 0.0)),
        Light(120.0, (0.0, 1.0, 0.0)),
        Light(240.0, (0.0, 0.0, 1.0)),
    )

    def __post_init__(self):
        if not self.lights:
            raise ValueError("rig needs at least one light")


@dataclass(frozen=True)
class SceneObject:
    """An external object above (or against) the sensor surface."""

    texture: ChannelPlane  # grayscale albedo map, 0..255
    tint: tuple[float, float, float] = (1.0, 0.95, 0.9)
    distance: float = 30.0  # mm above the surface; 0 = touching
    lateral_offset: tuple[float, float] = (0.0, 0.0)  # mm

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")


@dataclass(frozen=True)
class NoiseEvent:
    start_frame: int
    end_frame: int
    boost: float

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError("noise event start must be <= end")
        if self.boost < 0:
            raise ValueError(f"boost must be >= 0, got {self.boost}")

    def active(self, frame_index: int) -> bool:
        return self.start_frame <= frame_index <= self.end_frame


@dataclass(frozen=True)
class RenderConfig:
    width: int = 320
    height: int = 240
    baseline_grid_gain: float = 150.0
    ambient_gain: float = 12.0
    reflection_gain: float = 260.0
    skin_gain: float = 36.0
    blur_per_mm: float = 0.35
    attenuation_per_mm: float = 0.84
    object_gain: float = 140.0
    parallax_base_px: float = 6.0
    parallax_per_mm: float = 0.6
    wall_half_width_px: float = 1.4
    orient_floor: float = 0.15
    vignette: float = 0.35
    contact_absorption: float = 0.92
    wall_block: float = 0.93
    exposure_sensitivity: float = 0.15
    beam_floor: float = 0.12
    beam_jitter: float = 0.15
    transmit_wall_block: float = 0.3
    channel_gate_floor: float = 0.25
    channel_gate_px: int = 32
    min_blur_sigma: float = 0.9
    static_noise: float = 2.0
    temporal_noise: float = 0.3
    seed: int = 12345

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("render resolution must be at least 8x8")
        for name in (
            "baseline_grid_gain", "ambient_gain", "reflection_gain", "skin_gain",
            "object_gain", "static_noise", "temporal_noise",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.blur_per_mm <= 0:
            raise ValueError("blur_per_mm must be > 0")
        if not 0.0 < self.attenuation_per_mm <= 1.0:
            raise ValueError("attenuation_per_mm must be in (0, 1]")
        if not 0.0 <= self.contact_absorption <= 1.0:
            raise ValueError("contact_absorption must be in [0, 1]")
        if not 0.0 <= self.wall_block <= 1.0:
            raise ValueError("wall_block must be in [0, 1]")


def _blur_float(values: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel(sigma)
    rows = _convolve_rows(values, kernel)
    return _convolve_rows(rows.T, kernel).T


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a coarse (gx, gy) map onto the pixel raster, edge-clamped.

    Pixel centers map to fractional cell-center coordinates, so a one-hot
    cell becomes a smooth local blob and the map stays linear in values.
    """
    gx, gy = grid.shape
    fx = (np.arange(height) + 0.5) * gx / height - 0.5
    fy = (np.arange(width) + 0.5) * gy / width - 0.5
    x0 = np.clip(np.floor(fx).astype(int), 0, gx - 1)
    y0 = np.clip(np.floor(fy).astype(int), 0, gy - 1)
    x1 = np.clip(x0 + 1, 0, gx - 1)
    y1 = np.clip(y0 + 1, 0, gy - 1)
    wx = np.clip(fx - x0, 0.0, 1.0)[:, None]
    wy = np.clip(fy - y0, 0.0, 1.0)[None, :]
    top = grid[x0[:, None], y0[None, :]] * (1 - wy) + grid[x0[:, None], y1[None, :]] * wy
    bot = grid[x1[:, None], y0[None, :]] * (1 - wy) + grid[x1[:, None], y1[None, :]] * wy
    return top * (1 - wx) + bot * wx


def make_speckle_texture(size: int = 160, seed: int = 7, coverage: float = 0.18,
                         feature_px: float = 3.0) -> ChannelPlane:
    """Sparse bright-speckle albedo map for synthetic objects.

    Sparse high-contrast features keep the per-channel residuals
    decorrelated under the per-light parallax shifts; a dense gray texture
    would correlate across channels and read as light noise instead.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((size, size))
    smooth = _blur_float(noise, feature_px)
    cut = np.quantile(smooth, 1.0 - coverage)
    speckle = np.clip((smooth - cut) / (smooth.max() - cut + 1e-12), 0.0, 1.0)
    speckle = np.sqrt(speckle)  # harden the dot cores
    return ChannelPlane(round_u8(speckle * 255.0), "gray")


class Renderer:
    """Binds a render config, lattice geometry, and light rig.

    All static fields (wall masks, exposures, vignettes, fixed-pattern
    noise) are precomputed once; render() is then pure in its per-frame
    arguments, and deterministic given the seed.
    """

    def __init__(
        self,
        cfg: RenderConfig | None = None,
        lattice_cfg: LatticeConfig | None = None,
        rig: LightRig | None = None,
    ):
        self.cfg = cfg or RenderConfig()
        self.lattice_cfg = lattice_cfg or LatticeConfig()
        self.rig = rig or LightRig()
        c, lc = self.cfg, self.lattice_cfg
        h, w = c.height, c.width

        self.extent_x = lc.nx * lc.dx
        self.extent_y = lc.ny * lc.dy
        self.ppm_x = h / self.extent_x
        self.ppm_y = w / self.extent_y
        self.x_mm = (np.arange(h) + 0.5) / self.ppm_x
        self.y_mm = (np.arange(w) + 0.5) / self.ppm_y
        self.X, self.Y = np.meshgrid(self.x_mm, self.y_mm, indexing="ij")

        # wall families: const-x planes (normal along x) and const-y planes
        dist_x = np.minimum(self.x_mm % lc.dx, lc.dx - self.x_mm % lc.dx) * self.ppm_x
        dist_y = np.minimum(self.y_mm % lc.dy, lc.dy - self.y_mm % lc.dy) * self.ppm_y
        wall_x = np.clip(c.wall_half_width_px + 0.5 - dist_x, 0.0, 1.0)[:, None]
        wall_y = np.clip(c.wall_half_width_px + 0.5 - dist_y, 0.0, 1.0)[None, :]
        self.wall_x = np.broadcast_to(wall_x, (h, w)).copy()
        self.wall_y = np.broadcast_to(wall_y, (h, w)).copy()
        self.wallness = np.maximum(self.wall_x, self.wall_y)

        # per-light falloff across the sensor, per-channel exposures
        self.vignettes = []
        for light in self.rig.lights:
            phi = math.radians(light.azimuth_deg)
            d = (math.cos(phi), math.sin(phi))
            proj = self.X * d[0] + self.Y * d[1]
            span = max(proj.max() - proj.min(), 1e-9)
            t = (proj - proj.min()) / span
            self.vignettes.append(1.0 - c.vignette * t)

        self.wall_glow = []  # per channel: walls lit by orientation + falloff
        self.flat_exposure = []  # per channel: falloff only, wall-agnostic
        self.parallax_dir = []  # per channel: dominant light direction
        for ch in range(3):
            glow = np.zeros((h, w))
            flat = np.zeros((h, w))
            best_w, best_dir = -1.0, (1.0, 0.0)
            for light, vign in zip(self.rig.lights, self.vignettes):
                lw = light.weights[ch] * light.intensity
                if lw == 0.0:
                    continue
                phi = math.radians(light.azimuth_deg)
                # wall normal along x is hit by cos(phi), along y by sin(phi)
                expo_x = c.orient_floor + (1 - c.orient_floor) * math.cos(phi) ** 2
                expo_y = c.orient_floor + (1 - c.orient_floor) * math.sin(phi) ** 2
                fam = np.maximum(self.wall_x * expo_x, self.wall_y * expo_y)
                glow += lw * vign * fam
                flat += lw * vign
                if lw > best_w:
                    best_w, best_dir = lw, (math.cos(phi), math.sin(phi))
            self.wall_glow.append(glow)
            self.flat_exposure.append(flat)
            self.parallax_dir.append(best_dir)

        # Each light refracts through the grid along its own path, so each
        # channel picks up different regions of a transmitted object. The
        # per-channel gate fields encode that: smooth seeded patches in
        # [gate_floor, 1], fixed in sensor space. Without them the shared
        # object envelope would correlate the filtered channels and an
        # approach would misread as light noise.
        self.channel_gate = []
        for ch in range(3):
            g_rng = np.random.default_rng((c.seed, 424243, ch))
            coarse = g_rng.standard_normal(
                (max(h // c.channel_gate_px, 2), max(w // c.channel_gate_px, 2))
            )
            fld = _bilinear_upsample(coarse, h, w)
            fld = fld / max(np.abs(fld).max(), 1e-9)
            patches = np.clip(0.5 + 1.8 * fld, 0.0, 1.0)
            self.channel_gate.append(
                c.channel_gate_floor + (1.0 - c.channel_gate_floor) * patches
            )

        rng = np.random.default_rng(c.seed)
        self.static_pattern = rng.uniform(-c.static_noise, c.static_noise, (h, w, 3))
        self._beam_cache: dict[int, np.ndarray] = {}

    # -- term builders ------------------------------------------------------

    def project_strain(self, strain: np.ndarray) -> np.ndarray:
        """Depth-weighted strain splat onto the pixel raster (float field).

        Layers nearer the camera (top) weigh more; the result is linear in
        the strain values.
        """
        lc = self.lattice_cfg
        if strain.shape != (lc.nx, lc.ny, lc.nz):
            raise ValueError(
                f"strain shape {strain.shape} does not match lattice "
                f"({lc.nx}, {lc.ny}, {lc.nz})"
            )
        weights = (np.arange(lc.nz) + 1.0) / lc.nz
        coarse = np.tensordot(strain, weights, axes=([2], [0]))
        return _bilinear_upsample(coarse, self.cfg.height, self.cfg.width)

    def _contact_field(self, indenter: Indenter | None) -> np.ndarray | None:
        """Normalized skin penetration in [0,1] per pixel (None if absent)."""
        if indenter is None or (indenter.depth == 0.0 and indenter.shape != "plane"):
            return None
        lift = indenter.profile(self.X, self.Y)
        if not np.any(lift > 0):
            return None
        return np.clip(lift / self.lattice_cfg.skin_thickness, 0.0, 1.0)

    def _beam(self, event_id: int) -> np.ndarray:
        """Shared-across-channels spatial pattern of one external-light event."""
        if event_id in self._beam_cache:
            return self._beam_cache[event_id]
        c = self.cfg
        h, w = c.height, c.width
        rng = np.random.default_rng((c.seed, 104729, event_id))
        cx = rng.uniform(0.3, 0.7) * h
        cy = rng.uniform(0.3, 0.7) * w
        rx = rng.uniform(0.45, 0.7) * h
        ry = rng.uniform(0.45, 0.7) * w
        ii = np.arange(h)[:, None]
        jj = np.arange(w)[None, :]
        blob = np.exp(-(((ii - cx) / rx) ** 2 + ((jj - cy) / ry) ** 2))
        beam = c.beam_floor + (1.0 - c.beam_floor) * blob
        coarse = rng.standard_normal((max(h // 16, 2), max(w // 16, 2)))
        ripple = _bilinear_upsample(coarse, h, w)
        ripple = ripple / max(np.abs(ripple).max(), 1e-9)
        beam = beam * (1.0 + c.beam_jitter * ripple)
        beam = np.clip(beam, 0.0, 1.2)
        if len(self._beam_cache) > 64:
            self._beam_cache.clear()
        self._beam_cache[event_id] = beam
        return beam

    def _transmitted(self, obj: SceneObject, ch: int) -> np.ndarray:
        c = self.cfg
        h, w = c.height, c.width
        tex = obj.texture.data.astype(np.float64) / 255.0
        th, tw = tex.shape
        canvas = np.zeros((h, w))
        ci = int(round(h / 2 + obj.lateral_offset[0] * self.ppm_x - th / 2))
        cj = int(round(w / 2 + obj.lateral_offset[1] * self.ppm_y - tw / 2))
        i0, j0 = max(ci, 0), max(cj, 0)
        i1, j1 = min(ci + th, h), min(cj + tw, w)
        if i0 >= i1 or j0 >= j1:
            return canvas
        canvas[i0:i1, j0:j1] = tex[i0 - ci : i1 - ci, j0 - cj : j1 - cj]

        d = obj.distance
        shift = c.parallax_base_px + c.parallax_per_mm * d
        dx, dy = self.parallax_dir[ch]
        canvas = np.roll(
            canvas, (int(round(shift * dx)), int(round(shift * dy))), axis=(0, 1)
        )
        sigma = max(c.blur_per_mm * d, c.min_blur_sigma)
        blurred = _blur_float(canvas, sigma)
        amp = c.object_gain * (c.attenuation_per_mm ** d) * obj.tint[ch]
        occlusion = 1.0 - c.transmit_wall_block * self.wallness
        lighting = 0.5 + 0.5 * self.flat_exposure[ch] / max(
            self.flat_exposure[ch].max(), 1e-9
        )
        return amp * blurred * occlusion * lighting * self.channel_gate[ch]

    # -- full frame ---------------------------------------------------------

    def render(
        self,
        strain: np.ndarray | None = None,
        obj: SceneObject | None = None,
        noise: NoiseEvent | None = None,
        indenter: Indenter | None = None,
        frame_index: int = 0,
    ) -> Frame:
        c = self.cfg
        h, w = c.height, c.width
        refl_splat = self.project_strain(strain) if strain is not None else None
        contact = self._contact_field(indenter)

        boost = 0.0
        beam = None
        if noise is not None and noise.active(frame_index) and noise.boost > 0:
            boost = noise.boost
            beam = self._beam(noise.start_frame)
        exposure_factor = 1.0 / (1.0 + c.exposure_sensitivity * boost)

        rng_t = np.random.default_rng((c.seed, 999983, frame_index))
        temporal = rng_t.uniform(-c.temporal_noise, c.temporal_noise, (h, w, 3))

        out = np.zeros((h, w, 3))
        for ch in range(3):
            internal = (
                c.baseline_grid_gain * self.wall_glow[ch]
                + c.ambient_gain * 0.5 * self.flat_exposure[ch]
            )
            if refl_splat is not None:
                internal = internal + (
                    c.reflection_gain
                    * refl_splat
                    * (0.35 + 0.65 * self.wallness)
                    * self.flat_exposure[ch]
                )
            skin = 0.0
            if contact is not None:
                internal = internal * (1.0 - c.contact_absorption * contact)
                skin = c.skin_gain * 4.0 * contact * (1.0 - contact) * self.flat_exposure[ch]
            plane = internal + skin
            if obj is not None:
                plane = plane + self._transmitted(obj, ch)
            plane = plane * exposure_factor
            if beam is not None:
                plane = plane + boost * beam * (1.0 - c.wall_block * self.wallness)
            plane = plane + self.static_pattern[:, :, ch] + temporal[:, :, ch]
            out[:, :, ch] = plane
        return Frame(round_u8(out))

    def render_rest_sequence(self, n: int, start_index: int = 0) -> list[Frame]:
        """The reference-building preamble: n object-free rest frames."""
        return [self.render(frame_index=start_index + i) for i in range(n)]
