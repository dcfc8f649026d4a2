"""Procedural four-view synthetic cordon scenes with exact ground-truth weights.

A scene is a set of spherical berries packed into ellipsoidal clusters
hanging from a horizontal cordon segment, plus per-view opaque leaf
ellipses. The true weight is the analytic berry-mass sum, so appearance
never influences the label. Each of the four views (side E/W, camera
1/2) projects the scene orthographically: the E camera looks along -z,
the W camera along +z, and the two cameras sit at a +/-15 degree yaw.
Per-view leaves hide a different berry subset in every view, which is
what makes the extra views genuinely informative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import MANIFEST_COLUMNS, VIEW_ORDER
from .imageops import RgbImage, save_image

CORDON_LENGTH_CM = 90.0
# cordon runs along x centered on the origin, so the mirrored W-side view
# projects into the same frame as the E side
FRAME_U_CM = (-57.0, 57.0)       # horizontal span of the full (uncropped) frame
FRAME_V_CM = (-36.0, 10.0)
CROP_MARGIN_CM = 4.0
CAMERA_YAW_DEG = 15.0

BACKGROUND_RGB = (222, 225, 210)
CORDON_RGB = (92, 62, 38)
BERRY_RGB = (52, 36, 84)
LEAF_RGB = (58, 96, 44)

# id-buffer codes below any berry index
_ID_BACKGROUND = -1
_ID_OCCLUDER = -2
_ID_CORDON = -3


@dataclass(frozen=True)
class Berry:
    center: tuple[float, float, float]  # cm: x along cordon, y up, z across row
    radius: float                       # cm


@dataclass(frozen=True)
class LeafOccluder:
    center_u: float
    center_v: float
    semi_u: float
    semi_v: float
    angle: float


@dataclass(frozen=True)
class SynthConfig:
    cluster_count_range: tuple[int, int] = (7, 14)
    berries_per_cluster_range: tuple[int, int] = (40, 56)
    berry_radius_range_cm: tuple[float, float] = (0.6, 1.0)
    density_g_cm3: float = 1.05
    leaf_count_range: tuple[int, int] = (8, 16)
    image_size: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("cluster_count_range", "berries_per_cluster_range",
                     "berry_radius_range_cm", "leaf_count_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be a non-empty non-negative range, got ({lo}, {hi})")
        if self.density_g_cm3 <= 0:
            raise ValueError(f"density must be positive, got {self.density_g_cm3}")
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")


@dataclass
class SyntheticScene:
    berries: list[Berry]
    occluders: dict[tuple[str, int], list[LeafOccluder]] = field(default_factory=dict)
    cordon: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-CORDON_LENGTH_CM / 2.0, 0.0, 0.0), (CORDON_LENGTH_CM / 2.0, 0.0, 0.0))
    density_g_cm3: float = 1.05
    weight_g: float = 0.0


def berry_mass_g(radius_cm: float, density_g_cm3: float) -> float:
    return (4.0 / 3.0) * math.pi * radius_cm ** 3 * density_g_cm3


def true_weight(scene: SyntheticScene) -> float:
    """Analytic ground truth: sum over berries of (4/3)*pi*r^3*density."""
    return float(sum(berry_mass_g(b.radius, scene.density_g_cm3) for b in scene.berries))


def _project(xyz: np.ndarray, side: str, camera: int) -> np.ndarray:
    """World points [n,3] -> view columns (u, v, depth); larger depth is nearer."""
    phi = math.radians(CAMERA_YAW_DEG) * (1.0 if camera == 2 else -1.0)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    xr = x * math.cos(phi) + z * math.sin(phi)
    zr = -x * math.sin(phi) + z * math.cos(phi)
    if side == "E":
        return np.column_stack([xr, y, zr])
    return np.column_stack([-xr, y, -zr])


def generate_scene(config: SynthConfig, rng: np.random.Generator) -> SyntheticScene:
    """Sample clusters along the cordon, pack berries into their ellipsoids,
    then sample an independent leaf set for every view."""
    n_clusters = int(rng.integers(config.cluster_count_range[0],
                                  config.cluster_count_range[1] + 1))
    r_lo, r_hi = config.berry_radius_range_cm
    berries: list[Berry] = []
    cluster_centers = np.zeros((max(n_clusters, 1), 3))
    for ci in range(n_clusters):
        half = CORDON_LENGTH_CM / 2.0
        cx = rng.uniform(-half + 5.0, half - 5.0)
        cy = rng.uniform(-18.0, -6.0)
        cz = rng.uniform(-4.0, 4.0)
        cluster_centers[ci] = (cx, cy, cz)
        ax = rng.uniform(5.0, 9.0)
        ay = rng.uniform(8.0, 13.0)
        az = rng.uniform(4.0, 6.5)
        n_berries = int(rng.integers(config.berries_per_cluster_range[0],
                                     config.berries_per_cluster_range[1] + 1))
        # uniform points in the unit ball, scaled to the cluster ellipsoid
        d = rng.normal(size=(n_berries, 3))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
        d *= rng.uniform(0.0, 1.0, size=(n_berries, 1)) ** (1.0 / 3.0)
        radii = rng.uniform(r_lo, r_hi, size=n_berries)
        for j in range(n_berries):
            berries.append(Berry(
                center=(cx + d[j, 0] * ax, cy + d[j, 1] * ay, cz + d[j, 2] * az),
                radius=float(radii[j]),
            ))

    occluders: dict[tuple[str, int], list[LeafOccluder]] = {}
    for view in VIEW_ORDER:
        leaves: list[LeafOccluder] = []
        n_leaves = int(rng.integers(config.leaf_count_range[0],
                                    config.leaf_count_range[1] + 1))
        if n_clusters > 0:
            proj = _project(cluster_centers[:n_clusters], *view)
            for _ in range(n_leaves):
                ci = int(rng.integers(0, n_clusters))
                leaves.append(LeafOccluder(
                    center_u=float(proj[ci, 0] + rng.uniform(-6.0, 6.0)),
                    center_v=float(proj[ci, 1] + rng.uniform(-7.0, 7.0)),
                    semi_u=float(rng.uniform(3.5, 7.5)),
                    semi_v=float(rng.uniform(2.5, 6.0)),
                    angle=float(rng.uniform(0.0, math.pi)),
                ))
        occluders[view] = leaves

    scene = SyntheticScene(berries=berries, occluders=occluders,
                           density_g_cm3=config.density_g_cm3)
    scene.weight_g = true_weight(scene)
    return scene


def _crop_window(scene: SyntheticScene, side: str, camera: int):
    """Tight content window (like a manual crop around the grapes), in view cm."""
    if not scene.berries:
        return FRAME_U_CM, FRAME_V_CM
    pts = np.array([b.center for b in scene.berries])
    radii = np.array([b.radius for b in scene.berries])
    proj = _project(pts, side, camera)
    u_lo = max(FRAME_U_CM[0], float((proj[:, 0] - radii).min()) - CROP_MARGIN_CM)
    u_hi = min(FRAME_U_CM[1], float((proj[:, 0] + radii).max()) + CROP_MARGIN_CM)
    v_lo = max(FRAME_V_CM[0], float((proj[:, 1] - radii).min()) - CROP_MARGIN_CM)
    v_hi = min(FRAME_V_CM[1], float((proj[:, 1] + radii).max()) + CROP_MARGIN_CM)
    return (u_lo, u_hi), (v_lo, v_hi)


def _tint(index: int, spread: float) -> float:
    return 1.0 + spread * ((index * 2654435761 % 256) / 255.0 - 0.5)


def _paint_view(scene: SyntheticScene, view: tuple[str, int], image_size: int,
                full_frame: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Painter's algorithm over berries then leaves.

    Returns (rgb uint8 [H,W,3], id int32 [H,W]) where the id buffer holds the
    index of the berry whose surface owns each pixel, or a negative code.
    """
    side, camera = view
    ppcm = image_size / (FRAME_U_CM[1] - FRAME_U_CM[0])
    if full_frame:
        (u_lo, u_hi), (v_lo, v_hi) = FRAME_U_CM, FRAME_V_CM
    else:
        (u_lo, u_hi), (v_lo, v_hi) = _crop_window(scene, side, camera)
    w_px = max(16, int(round((u_hi - u_lo) * ppcm)))
    h_px = max(16, int(round((v_hi - v_lo) * ppcm)))

    rgb = np.empty((h_px, w_px, 3), dtype=np.uint8)
    rgb[:, :] = BACKGROUND_RGB
    ids = np.full((h_px, w_px), _ID_BACKGROUND, dtype=np.int32)

    def to_px(u, v):
        return (u - u_lo) * ppcm, (v_hi - v) * ppcm

    # cordon bar across the frame at y in [-1.5, 1.5]
    _, bar_top = to_px(0.0, 1.5)
    _, bar_bot = to_px(0.0, -1.5)
    r0, r1 = int(max(0, round(bar_top))), int(min(h_px, round(bar_bot)))
    if r1 > r0:
        rgb[r0:r1, :] = CORDON_RGB
        ids[r0:r1, :] = _ID_CORDON

    if scene.berries:
        pts = np.array([b.center for b in scene.berries])
        radii = np.array([b.radius for b in scene.berries])
        proj = _project(pts, side, camera)
        order = np.argsort(proj[:, 2], kind="stable")  # far first, near painted last
        base = np.array(BERRY_RGB, dtype=np.float64)
        for bi in order:
            cu, cv = to_px(proj[bi, 0], proj[bi, 1])
            r_px = radii[bi] * ppcm
            x0 = max(0, int(math.floor(cu - r_px)))
            x1 = min(w_px, int(math.ceil(cu + r_px)) + 1)
            y0 = max(0, int(math.floor(cv - r_px)))
            y1 = min(h_px, int(math.ceil(cv + r_px)) + 1)
            if x0 >= x1 or y0 >= y1:
                continue
            yy, xx = np.mgrid[y0:y1, x0:x1]
            d2 = ((xx - cu) ** 2 + (yy - cv) ** 2) / (r_px * r_px)
            mask = d2 <= 1.0
            if not mask.any():
                continue
            bright = 1.18 - 0.55 * d2[mask]
            color = np.clip(base * _tint(int(bi), 0.22) * bright[:, None], 0, 255)
            rgb[y0:y1, x0:x1][mask] = color.astype(np.uint8)
            ids[y0:y1, x0:x1][mask] = bi

    leaf_base = np.array(LEAF_RGB, dtype=np.float64)
    for li, leaf in enumerate(scene.occluders.get(view, [])):
        cu, cv = to_px(leaf.center_u, leaf.center_v)
        su, sv = leaf.semi_u * ppcm, leaf.semi_v * ppcm
        ext = max(su, sv)
        x0 = max(0, int(math.floor(cu - ext)))
        x1 = min(w_px, int(math.ceil(cu + ext)) + 1)
        y0 = max(0, int(math.floor(cv - ext)))
        y1 = min(h_px, int(math.ceil(cv + ext)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dx, dy = xx - cu, yy - cv
        ca, sa = math.cos(leaf.angle), math.sin(leaf.angle)
        e = ((dx * ca + dy * sa) / su) ** 2 + ((-dx * sa + dy * ca) / sv) ** 2
        mask = e <= 1.0
        if not mask.any():
            continue
        shade = 1.05 - 0.25 * e[mask]
        color = np.clip(leaf_base * _tint(li, 0.18) * shade[:, None], 0, 255)
        rgb[y0:y1, x0:x1][mask] = color.astype(np.uint8)
        ids[y0:y1, x0:x1][mask] = _ID_OCCLUDER

    return rgb, ids


def render_view(scene: SyntheticScene, view: tuple[str, int], image_size: int,
                full_frame: bool = False) -> RgbImage:
    rgb, _ = _paint_view(scene, view, image_size, full_frame=full_frame)
    return RgbImage(rgb)


def berry_visibility(scene: SyntheticScene, view: tuple[str, int],
                     image_size: int) -> np.ndarray:
    """Boolean per berry: does it own at least one pixel in this view."""
    _, ids = _paint_view(scene, view, image_size)
    visible = np.zeros(len(scene.berries), dtype=bool)
    owners = np.unique(ids)
    visible[owners[owners >= 0]] = True
    return visible


def render_reference(config: SynthConfig) -> RgbImage:
    """The standard image used for histogram matching: a typical full-frame scene."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    scene = generate_scene(config, rng)
    return render_view(scene, ("E", 1), config.image_size, full_frame=True)


def generate_dataset(n_examples: int, config: SynthConfig, out_dir: str | Path) -> Path:
    """Write n_examples * 4 view images, the reference image and a manifest CSV.

    Example i belongs to plant i//2 + 1, cordons alternating N then S, so the
    naming scheme mirrors the two-cordons-per-vine field layout.
    """
    if n_examples < 1:
        raise ValueError(f"n_examples must be >= 1, got {n_examples}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(config.seed).spawn(n_examples)

    save_image(render_reference(config), out_dir / "reference.png")

    rows = []
    for i in range(n_examples):
        plant = i // 2 + 1
        cordon = "N" if i % 2 == 0 else "S"
        scene = generate_scene(config, np.random.default_rng(children[i]))
        row = {"plant": plant, "cordon": cordon, "weight_g": repr(scene.weight_g)}
        for side, cam in VIEW_ORDER:
            name = f"{plant}{cordon}{side}{cam}.png"
            save_image(render_view(scene, (side, cam), config.image_size), out_dir / name)
            row[f"img_{side}{cam}"] = name
        rows.append(row)

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(MANIFEST_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    return manifest
