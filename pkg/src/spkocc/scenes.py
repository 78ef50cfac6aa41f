"""Synthetic occluded scenes: two fronto-parallel planes under a translating camera.

A textured background plane at depth ``depth_bg`` sits behind an occluder plane at
``depth_occ``. The camera translates horizontally at ``camera_velocity`` pixels per
step (at unit depth), so image displacement is inversely proportional to depth; the
occluder may additionally move on its own. Frames are rendered per readout step and
fed to the integrate-and-fire simulator.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterator

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from .simulate import simulate_stream
from .spikes import SpikeStream

OCCLUDER_PATTERNS = ("square_mesh", "hexagonal_mesh", "dense_frame", "fence", "fabric_net")

GT_LEVELS = 65535


class SceneConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    duration: int = 700
    pattern: str = "square_mesh"
    occluder_period: float = 12.0
    occluder_thickness: float = 3.0
    occluder_intensity: float = 0.05
    occluder_opacity: float = 1.0
    depth_bg: float = 15.0
    depth_occ: float = 1.0
    camera_velocity: float = 0.05
    occluder_velocity: tuple[float, float] = (0.0, 0.0)
    threshold: float = 1.0
    gain: float = 0.2
    noise_std: float = 0.0
    seed: int = 0
    # Extra canvas pixels around the crop; None sizes the canvas from the motion.
    background_margin: int | None = None

    def __post_init__(self):
        self.occluder_velocity = tuple(float(v) for v in self.occluder_velocity)
        self.validate()

    def validate(self) -> None:
        for name in ("height", "width", "duration"):
            if int(getattr(self, name)) <= 0:
                raise SceneConfigError(name, "must be positive")
        if self.pattern not in OCCLUDER_PATTERNS:
            raise SceneConfigError("pattern", f"unknown occluder {self.pattern!r}; expected one of {OCCLUDER_PATTERNS}")
        if not self.depth_occ > 0:
            raise SceneConfigError("depth_occ", "must be positive")
        if not self.depth_occ < self.depth_bg:
            raise SceneConfigError("depth_bg", "occluder must be nearer than background (depth_occ < depth_bg)")
        for name in ("occluder_intensity", "occluder_opacity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SceneConfigError(name, "must lie in [0, 1]")
        if not self.occluder_period > 0:
            raise SceneConfigError("occluder_period", "must be positive")
        if not self.occluder_thickness > 0:
            raise SceneConfigError("occluder_thickness", "must be positive")
        if len(self.occluder_velocity) != 2:
            raise SceneConfigError("occluder_velocity", "must be a (vy, vx) pair")
        if not self.threshold > 0:
            raise SceneConfigError("threshold", "must be positive")
        if not self.gain > 0:
            raise SceneConfigError("gain", "must be positive")
        if self.noise_std < 0:
            raise SceneConfigError("noise_std", "must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["occluder_velocity"] = list(self.occluder_velocity)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise SceneConfigError(name, "unknown scene field")
        return cls(**d)


@dataclass(eq=False)
class Sample:
    stream: SpikeStream
    ground_truth: np.ndarray | None
    scene: SceneSpec | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.ground_truth is not None and self.ground_truth.shape != (self.stream.height, self.stream.width):
            raise ValueError(
                f"ground truth shape {self.ground_truth.shape} does not match stream "
                f"{(self.stream.height, self.stream.width)}"
            )

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        if self.stream != other.stream:
            return False
        if (self.ground_truth is None) != (other.ground_truth is None):
            return False
        if self.ground_truth is not None:
            return (
                self.ground_truth.dtype == other.ground_truth.dtype
                and np.array_equal(self.ground_truth, other.ground_truth)
            )
        return True


def quantize_gt(img: np.ndarray) -> np.ndarray:
    """Snap an image onto the 16-bit fixed-point grid used by the container format."""
    q = np.round(np.clip(img, 0.0, 1.0) * GT_LEVELS).astype(np.uint16)
    return dequantize_gt(q)


def dequantize_gt(q: np.ndarray) -> np.ndarray:
    return (q.astype(np.float64) / GT_LEVELS).astype(np.float32)


# -- displacement model -----------------------------------------------------------

def displacements(scene: SceneSpec, t: float) -> tuple[float, tuple[float, float]]:
    """Background x-shift and occluder (y, x) shift in pixels at step ``t``."""
    bg_dx = scene.camera_velocity * t / scene.depth_bg
    vy, vx = scene.occluder_velocity
    occ_dx = scene.camera_velocity * t / scene.depth_occ + vx * t
    occ_dy = vy * t
    return bg_dx, (occ_dy, occ_dx)


def sample_shifted(canvas: np.ndarray, origin: tuple[int, int], shift: tuple[float, float],
                   size: tuple[int, int]) -> np.ndarray:
    """Bilinearly sample a ``size`` window of ``canvas`` at ``origin + shift``."""
    h, w = size
    y = origin[0] + shift[0]
    x = origin[1] + shift[1]
    y0 = math.floor(y)
    x0 = math.floor(x)
    fy = y - y0
    fx = x - x0
    if y0 < 0 or x0 < 0 or y0 + h + 1 > canvas.shape[0] or x0 + w + 1 > canvas.shape[1]:
        raise ValueError(
            f"shift {shift} moves the {size} crop outside the {canvas.shape} canvas; pad the canvas further"
        )
    a = canvas[y0:y0 + h, x0:x0 + w]
    b = canvas[y0:y0 + h, x0 + 1:x0 + w + 1]
    c = canvas[y0 + 1:y0 + h + 1, x0:x0 + w]
    d = canvas[y0 + 1:y0 + h + 1, x0 + 1:x0 + w + 1]
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)


# -- procedural textures ----------------------------------------------------------

def make_background(shape: tuple[int, int], rng: np.random.Generator, low: float = 0.1,
                    high: float = 0.9) -> np.ndarray:
    h, w = shape
    img = np.zeros(shape)
    for sigma, weight in ((2.0, 0.2), (4.0, 0.35), (10.0, 0.45)):
        layer = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
        img += weight * layer / (layer.std() + 1e-12)
    # piecewise-constant patches give sharp edges
    for _ in range(max(3, (h * w) // 1500)):
        ph, pw = rng.integers(4, max(5, h // 3)), rng.integers(4, max(5, w // 3))
        y, x = rng.integers(0, max(1, h - ph)), rng.integers(0, max(1, w - pw))
        img[y:y + ph, x:x + pw] += rng.uniform(-1.5, 1.5)
    yy, xx = np.mgrid[0:h, 0:w]
    img += rng.uniform(-1, 1) * yy / h + rng.uniform(-1, 1) * xx / w
    img -= img.min()
    img /= img.max() + 1e-12
    return low + (high - low) * img


def _stripe(coord: np.ndarray, period: float, thickness: float, phase: float = 0.0) -> np.ndarray:
    """Box-filtered coverage of lines of width ``thickness`` repeating every ``period``."""
    d = np.abs(np.mod(coord - phase + period / 2, period) - period / 2)
    return np.clip(thickness / 2 + 0.5 - d, 0.0, 1.0)


def _hexagon_edges(yy: np.ndarray, xx: np.ndarray, period: float, thickness: float) -> np.ndarray:
    # hex cell centres on a triangular lattice; edges lie on the Voronoi boundaries
    a = period
    b1 = np.array([a, 0.0])
    b2 = np.array([a / 2, a * math.sqrt(3) / 2])
    inv = np.linalg.inv(np.stack([b1, b2], axis=1))
    u = inv[0, 0] * xx + inv[0, 1] * yy
    v = inv[1, 0] * xx + inv[1, 1] * yy
    u0, v0 = np.floor(u), np.floor(v)
    dists = []
    for du in (-1, 0, 1, 2):
        for dv in (-1, 0, 1, 2):
            cu, cv = u0 + du, v0 + dv
            cx = cu * b1[0] + cv * b2[0]
            cy = cu * b1[1] + cv * b2[1]
            dists.append((xx - cx) ** 2 + (yy - cy) ** 2)
    dists = np.sort(np.stack(dists), axis=0)
    edge = (dists[1] - dists[0]) / (2 * a)
    return np.clip(thickness / 2 + 0.5 - edge, 0.0, 1.0)


def _fabric_net(shape: tuple[int, int], period: float, thickness: float,
                rng: np.random.Generator) -> np.ndarray:
    scale = 4
    h, w = shape
    img = Image.new("L", (w * scale, h * scale), 0)
    draw = ImageDraw.Draw(img)
    n_lines = max(4, int(2.0 * (h + w) / period))
    for _ in range(n_lines):
        # random-walk polyline entering on one edge and drifting across
        if rng.random() < 0.5:
            pts = [(0.0, rng.uniform(0, h))]
            heading = rng.uniform(-0.6, 0.6)
        else:
            pts = [(rng.uniform(0, w), 0.0)]
            heading = math.pi / 2 + rng.uniform(-0.6, 0.6)
        step = period * rng.uniform(0.6, 1.4)
        for _ in range(int(2 * (h + w) / step)):
            heading += rng.normal(0, 0.35)
            x, y = pts[-1]
            pts.append((x + step * math.cos(heading), y + step * math.sin(heading)))
            if not (-step <= pts[-1][0] <= w + step and -step <= pts[-1][1] <= h + step):
                break
        draw.line([(x * scale, y * scale) for x, y in pts], fill=255,
                  width=max(1, int(round(thickness * scale))))
    img = img.resize((w, h), Image.BOX)
    return np.asarray(img, dtype=np.float64) / 255.0


def make_occluder_mask(pattern: str, shape: tuple[int, int], period: float, thickness: float,
                       rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phase_y, phase_x = rng.uniform(0, period, size=2)
    if pattern == "square_mesh":
        return np.maximum(_stripe(xx, period, thickness, phase_x), _stripe(yy, period, thickness, phase_y))
    if pattern == "hexagonal_mesh":
        return _hexagon_edges(yy + phase_y, xx + phase_x, period, thickness)
    if pattern == "dense_frame":
        bars = _stripe(xx, period, thickness, phase_x)
        rails = _stripe(yy, 2 * period, thickness, phase_y)
        return np.maximum(bars, rails)
    if pattern == "fence":
        slats = _stripe(xx, period, thickness, phase_x)
        rail = _stripe(yy, 3 * period, 0.5 * thickness, phase_y)
        return np.maximum(slats, rail)
    if pattern == "fabric_net":
        return _fabric_net(shape, period, thickness, rng)
    raise SceneConfigError("pattern", f"unknown occluder {pattern!r}")


# -- rendering --------------------------------------------------------------------

def _margin(extent: float) -> int:
    return int(math.ceil(abs(extent))) + 2


class SceneRenderer:
    """Builds the seeded background/occluder canvases once and renders frames from them."""

    def __init__(self, scene: SceneSpec):
        scene.validate()
        self.scene = scene
        rng = np.random.default_rng(scene.seed)
        h, w = scene.height, scene.width
        last = scene.duration - 1
        bg_dx, (occ_dy, occ_dx) = displacements(scene, last)
        if scene.background_margin is None:
            bg_m = _margin(bg_dx)
        else:
            bg_m = int(scene.background_margin)
        self.bg_origin = (bg_m, bg_m)
        self.background = make_background((h + 2 * bg_m, w + 2 * bg_m), rng)
        occ_my, occ_mx = _margin(occ_dy), _margin(occ_dx)
        self.occ_origin = (occ_my, occ_mx)
        self.mask = scene.occluder_opacity * make_occluder_mask(
            scene.pattern, (h + 2 * occ_my, w + 2 * occ_mx), scene.occluder_period,
            scene.occluder_thickness, rng,
        )
        self.noise_rng = np.random.default_rng([scene.seed, 1])

    @property
    def size(self) -> tuple[int, int]:
        return (self.scene.height, self.scene.width)

    def background_view(self, t: float) -> np.ndarray:
        bg_dx, _ = displacements(self.scene, t)
        return sample_shifted(self.background, self.bg_origin, (0.0, bg_dx), self.size)

    def mask_view(self, t: float) -> np.ndarray:
        _, occ_shift = displacements(self.scene, t)
        return sample_shifted(self.mask, self.occ_origin, occ_shift, self.size)

    def render(self, t: int) -> np.ndarray:
        if not 0 <= t < self.scene.duration:
            raise ValueError(f"step {t} outside [0, {self.scene.duration})")
        m = self.mask_view(t)
        return m * self.scene.occluder_intensity + (1.0 - m) * self.background_view(t)

    def frames(self) -> Iterator[np.ndarray]:
        for t in range(self.scene.duration):
            yield self.render(t)

    def center_time(self) -> float:
        return (self.scene.duration - 1) / 2.0


def render_occluded_scene(scene: SceneSpec, t: int) -> np.ndarray:
    return SceneRenderer(scene).render(t)


def generate_sample(scene: SceneSpec) -> Sample:
    """Simulate the spike stream of ``scene`` and pair it with the clean center-view background."""
    renderer = SceneRenderer(scene)
    stream = simulate_stream(renderer.frames(), threshold=scene.threshold, gain=scene.gain,
                             noise_std=scene.noise_std, rng=renderer.noise_rng)
    gt = quantize_gt(renderer.background_view(renderer.center_time()))
    return Sample(stream=stream, ground_truth=gt, scene=scene, meta={"seed": scene.seed, "pattern": scene.pattern})


def random_scene(seed: int, pattern: str, height: int = 64, width: int = 64, duration: int = 700,
                 **overrides: Any) -> SceneSpec:
    """Draw a scene with randomized occluder geometry, motion and contrast."""
    if pattern not in OCCLUDER_PATTERNS:
        raise SceneConfigError("pattern", f"unknown occluder {pattern!r}; expected one of {OCCLUDER_PATTERNS}")
    rng = np.random.default_rng([seed, OCCLUDER_PATTERNS.index(pattern)])
    scale = max(1.0, min(height, width) / 96.0)
    period, thick = {
        "square_mesh": (rng.uniform(9, 13), rng.uniform(2.0, 3.0)),
        "hexagonal_mesh": (rng.uniform(10, 14), rng.uniform(2.0, 3.0)),
        "dense_frame": (rng.uniform(6, 8), rng.uniform(2.5, 3.5)),
        "fence": (rng.uniform(14, 20), rng.uniform(6.0, 9.0)),
        "fabric_net": (rng.uniform(8, 12), rng.uniform(1.5, 2.5)),
    }[pattern]
    period *= scale
    thick *= scale
    depth_occ = 1.0
    depth_bg = float(rng.uniform(10.0, 25.0))
    # horizontal sweep of the occluder over the whole capture, in pattern periods;
    # slow enough that the outer windows see it well displaced from the center view
    sweep = rng.uniform(0.8, 2.0) * period
    camera_velocity = sweep * depth_occ / max(1, duration - 1)
    drift = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.8) * period / max(1, duration - 1)
    own = (drift, rng.uniform(-0.2, 0.2) * camera_velocity)
    if rng.random() < 0.6:
        occ_int = rng.uniform(0.0, 0.15)
    else:
        occ_int = rng.uniform(0.8, 0.95)
    params = dict(
        height=height, width=width, duration=duration, pattern=pattern,
        occluder_period=float(period), occluder_thickness=float(thick),
        occluder_intensity=float(occ_int), depth_bg=depth_bg, depth_occ=depth_occ,
        camera_velocity=float(camera_velocity), occluder_velocity=own, seed=int(seed),
    )
    params.update(overrides)
    return SceneSpec(**params)
