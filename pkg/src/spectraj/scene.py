"""Scene files, synthetic scenario generation, and dataset splitting.

A scene file is line-oriented text: "#"-prefixed header lines, then a
CSV body with one row per (agent, frame) observation. Coordinates are
written with shortest round-trip floats so write -> parse is identity.
Rasters ride along as 8-bit PNG files next to the scene file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

CSV_HEADER = "agent,frame,x,y"
KNOWN_HEADER_KEYS = ("scene", "t_h", "t_f", "dt", "image", "affine")
SCENARIO_KINDS = ("linear", "turning", "stopping", "crossing", "roundabout")


@dataclass
class SceneWindow:
    """One observation/prediction episode.

    history is [t_h, N, 2] world coordinates, future [t_f, N, 2] or None
    for inference-only scenes. image is an optional grayscale raster in
    [0, 1] with a 2x3 world-to-pixel affine.
    """

    scene_id: str
    agent_ids: list[str]
    history: np.ndarray
    future: np.ndarray | None = None
    image: np.ndarray | None = None
    affine: np.ndarray | None = None
    dt: float = 0.4
    # forecast horizon carried by history-only (inference) scenes so the
    # file header round-trips; ignored when future is present
    forecast_frames: int | None = None

    def validate(self) -> None:
        if not self.scene_id:
            raise DataError("scene id must be a non-empty string")
        hist = np.asarray(self.history, dtype=np.float64)
        if hist.ndim != 3 or hist.shape[2] != 2 or hist.shape[0] < 1:
            raise DataError(f"history must be [t_h, N, 2], got {hist.shape}")
        n = hist.shape[1]
        if len(self.agent_ids) != n:
            raise DataError(
                f"{len(self.agent_ids)} agent ids for {n} agents")
        if len(set(self.agent_ids)) != n:
            raise DataError("agent ids must be unique")
        for aid in self.agent_ids:
            if not aid or "," in aid or any(ch.isspace() for ch in aid):
                raise DataError(f"agent id {aid!r} is empty or has separators")
        if not np.isfinite(hist).all():
            raise DataError("history has non-finite coordinates")
        if self.future is not None:
            fut = np.asarray(self.future, dtype=np.float64)
            if fut.ndim != 3 or fut.shape[1:] != (n, 2) or fut.shape[0] < 1:
                raise DataError(
                    f"future must be [t_f, {n}, 2], got {fut.shape}")
            if not np.isfinite(fut).all():
                raise DataError("future has non-finite coordinates")
        if (self.image is None) != (self.affine is None):
            raise DataError("image and affine must be provided together")
        if self.image is not None:
            img = np.asarray(self.image, dtype=np.float64)
            if img.ndim != 2 or min(img.shape) < 2:
                raise DataError(
                    f"image must be a 2-D raster, got shape {img.shape}")
            if np.asarray(self.affine, dtype=np.float64).shape != (2, 3):
                raise DataError("affine must be [2, 3]")
        if not self.dt > 0:
            raise DataError(f"frame period must be positive, got {self.dt}")

    @property
    def num_agents(self) -> int:
        return self.history.shape[1]

    @property
    def t_h(self) -> int:
        return self.history.shape[0]

    @property
    def t_f(self) -> int:
        if self.future is not None:
            return self.future.shape[0]
        return self.forecast_frames or 0

    def diagonal(self) -> float:
        """Bounding-box diagonal over every recorded position."""
        pts = self.history if self.future is None else np.concatenate(
            [self.history, self.future], axis=0)
        flat = pts.reshape(-1, 2)
        span = flat.max(axis=0) - flat.min(axis=0)
        return float(math.hypot(span[0], span[1]))


def _load_raster(path: Path) -> np.ndarray:
    img = np.asarray(Image.open(path), dtype=np.float64)
    if img.ndim == 3:
        # color rasters are averaged down to one luminance channel
        img = img[:, :, :3].mean(axis=2)
    return img / 255.0


def parse_scene(path) -> SceneWindow:
    """Read one scene file (and its raster, if the header names one)."""
    path = Path(path)
    headers: dict[str, str] = {}
    rows: list[tuple[str, int, float, float]] = []
    saw_csv_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if saw_csv_header:
                    raise DataError(
                        f"{path.name} line {lineno}: header after data rows")
                body = line[1:].strip()
                key, sep, value = body.partition(":")
                key = key.strip()
                if not sep or key not in KNOWN_HEADER_KEYS:
                    raise DataError(
                        f"{path.name} line {lineno}: unknown header {body!r}")
                headers[key] = value.strip()
                continue
            if not saw_csv_header:
                if line != CSV_HEADER:
                    raise DataError(
                        f"{path.name} line {lineno}: expected column header "
                        f"{CSV_HEADER!r}, got {line!r}")
                saw_csv_header = True
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(
                    f"{path.name} line {lineno}: expected 4 fields, "
                    f"got {len(parts)}")
            try:
                rows.append((parts[0], int(parts[1]),
                             float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise DataError(
                    f"{path.name} line {lineno}: {exc}") from None

    for key in ("scene", "t_h", "t_f", "dt"):
        if key not in headers:
            raise DataError(f"{path.name}: missing header '{key}'")
    try:
        t_h = int(headers["t_h"])
        t_f = int(headers["t_f"])
        dt = float(headers["dt"])
    except ValueError as exc:
        raise DataError(f"{path.name}: bad header value: {exc}") from None
    if t_h < 1 or t_f < 1:
        raise DataError(f"{path.name}: horizons must be >= 1")
    if not rows:
        raise DataError(f"{path.name}: no data rows")

    agent_ids: list[str] = []
    frames: dict[str, dict[int, tuple[float, float]]] = {}
    for aid, frame, x, y in rows:
        if aid not in frames:
            agent_ids.append(aid)
            frames[aid] = {}
        if frame in frames[aid]:
            raise DataError(
                f"{path.name}: duplicate frame {frame} for agent {aid}")
        frames[aid][frame] = (x, y)

    first = frames[agent_ids[0]]
    base = min(first)
    count = len(first)
    if count not in (t_h, t_h + t_f):
        raise DataError(
            f"{path.name}: agent {agent_ids[0]} has {count} frames, "
            f"expected {t_h} (history only) or {t_h + t_f}")
    expected = list(range(base, base + count))
    for aid in agent_ids:
        got = frames[aid]
        for frame in expected:
            if frame not in got:
                raise DataError(
                    f"{path.name}: agent {aid} is missing frame {frame}")
        if len(got) != count:
            extra = sorted(set(got) - set(expected))[0]
            raise DataError(
                f"{path.name}: agent {aid} has unexpected frame {extra}")

    track = np.empty((count, len(agent_ids), 2), dtype=np.float64)
    for col, aid in enumerate(agent_ids):
        for row_i, frame in enumerate(expected):
            track[row_i, col] = frames[aid][frame]
    history = track[:t_h]
    future = track[t_h:] if count == t_h + t_f else None

    image = affine = None
    if ("image" in headers) != ("affine" in headers):
        raise DataError(
            f"{path.name}: image and affine headers must appear together")
    if "image" in headers:
        values = headers["affine"].split()
        if len(values) != 6:
            raise DataError(
                f"{path.name}: affine header needs 6 numbers, "
                f"got {len(values)}")
        try:
            affine = np.array([float(v) for v in values]).reshape(2, 3)
        except ValueError as exc:
            raise DataError(f"{path.name}: bad affine: {exc}") from None
        image_path = path.parent / headers["image"]
        if not image_path.exists():
            raise DataError(f"{path.name}: raster {headers['image']} "
                            f"not found next to the scene file")
        image = _load_raster(image_path)

    window = SceneWindow(scene_id=headers["scene"], agent_ids=agent_ids,
                         history=history, future=future,
                         image=image, affine=affine, dt=dt,
                         forecast_frames=t_f if future is None else None)
    window.validate()
    return window


def write_scene(path, window: SceneWindow) -> None:
    """Write one scene file; the raster (if any) lands next to it as PNG."""
    window.validate()
    path = Path(path)
    t_f = window.t_f
    if t_f < 1:
        raise DataError(
            "history-only scene needs forecast_frames set to be written")
    lines = [
        f"# scene: {window.scene_id}",
        f"# t_h: {window.t_h}",
        f"# t_f: {t_f}",
        f"# dt: {window.dt!r}",
    ]
    if window.image is not None:
        image_name = path.stem + ".png"
        flat = " ".join(repr(float(v))
                        for v in np.asarray(window.affine).reshape(-1))
        lines.append(f"# image: {image_name}")
        lines.append(f"# affine: {flat}")
        data = np.clip(np.rint(np.asarray(window.image) * 255.0),
                       0, 255).astype(np.uint8)
        Image.fromarray(data, mode="L").save(path.parent / image_name)
    lines.append(CSV_HEADER)
    track = (window.history if window.future is None
             else np.concatenate([window.history, window.future], axis=0))
    for frame in range(track.shape[0]):
        for col, aid in enumerate(window.agent_ids):
            x, y = track[frame, col]
            lines.append(f"{aid},{frame},{float(x)!r},{float(y)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ScenarioSpec:
    """Recipe for one synthetic scene."""

    kind: str = "linear"
    num_agents: int = 3
    t_h: int = 8
    t_f: int = 12
    dt: float = 0.4
    noise: float = 0.0
    seed: int = 0
    extent: float = 12.0
    with_image: bool = False
    image_size: int = 64
    min_separation: float = 0.8
    # explicit kinematics for the single-agent linear case; seeded otherwise
    start: tuple[float, float] | None = None
    velocity: tuple[float, float] | None = None
    scene_id: str = ""

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(
                f"unknown scenario kind {self.kind!r}; "
                f"expected one of {', '.join(SCENARIO_KINDS)}")
        if self.num_agents < 1:
            raise ConfigError("num_agents must be >= 1")
        if self.t_h < 1 or self.t_f < 1:
            raise ConfigError("t_h and t_f must be >= 1")
        if self.dt <= 0 or self.extent <= 0:
            raise ConfigError("dt and extent must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.image_size < 4:
            raise ConfigError("image_size must be >= 4")
        if self.min_separation <= 0:
            raise ConfigError("min_separation must be positive")


def _window_span(spec: ScenarioSpec) -> float:
    return spec.dt * (spec.t_h + spec.t_f - 1)


def _linear_paths(spec: ScenarioSpec, rng) -> np.ndarray:
    t = spec.t_h + spec.t_f
    times = spec.dt * np.arange(t)[:, None]
    pos = np.empty((t, spec.num_agents, 2))
    center = spec.extent / 2.0
    travel = 0.6 * spec.extent
    for i in range(spec.num_agents):
        if i == 0 and spec.start is not None and spec.velocity is not None:
            p0 = np.asarray(spec.start, dtype=np.float64)
            v = np.asarray(spec.velocity, dtype=np.float64)
        else:
            theta = rng.uniform(0.0, 2.0 * math.pi)
            lane = (i - (spec.num_agents - 1) / 2.0) * 0.08 * spec.extent
            direction = np.array([math.cos(theta), math.sin(theta)])
            perp = np.array([-direction[1], direction[0]])
            p0 = center - 0.5 * travel * direction + lane * perp
            speed = travel / _window_span(spec) * rng.uniform(0.75, 0.95)
            v = speed * direction
        pos[:, i, :] = p0[None, :] + v[None, :] * times
    return pos


def _turning_paths(spec: ScenarioSpec, rng) -> np.ndarray:
    t = spec.t_h + spec.t_f
    times = spec.dt * np.arange(t)
    pos = np.empty((t, spec.num_agents, 2))
    for i in range(spec.num_agents):
        cx = rng.uniform(0.4, 0.6) * spec.extent
        cy = rng.uniform(0.4, 0.6) * spec.extent
        radius = rng.uniform(0.12, 0.24) * spec.extent
        theta0 = rng.uniform(0.0, 2.0 * math.pi)
        sweep = math.radians(rng.uniform(60.0, 140.0))
        omega = math.copysign(sweep / _window_span(spec),
                              rng.uniform(-1.0, 1.0))
        theta = theta0 + omega * times
        pos[:, i, 0] = cx + radius * np.cos(theta)
        pos[:, i, 1] = cy + radius * np.sin(theta)
    return pos


def _stopping_paths(spec: ScenarioSpec, rng) -> np.ndarray:
    t = spec.t_h + spec.t_f
    times = spec.dt * np.arange(t)
    pos = np.empty((t, spec.num_agents, 2))
    center = spec.extent / 2.0
    for i in range(spec.num_agents):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        lane = (i - (spec.num_agents - 1) / 2.0) * 0.08 * spec.extent
        direction = np.array([math.cos(theta), math.sin(theta)])
        perp = np.array([-direction[1], direction[0]])
        t_stop = rng.uniform(0.5, 0.8) * _window_span(spec)
        travel = 0.55 * spec.extent
        # distance covered by the ramp-to-rest profile is v0*t_stop/2
        v0 = 2.0 * travel / t_stop * rng.uniform(0.5, 0.7)
        p0 = center - 0.5 * travel * direction + lane * perp
        ramp = np.where(times < t_stop,
                        times - times ** 2 / (2.0 * t_stop),
                        t_stop / 2.0)
        pos[:, i, 0] = p0[0] + v0 * direction[0] * ramp
        pos[:, i, 1] = p0[1] + v0 * direction[1] * ramp
    return pos


def _crossing_paths(spec: ScenarioSpec, rng) -> np.ndarray:
    """Two groups whose straight paths intersect mid-window.

    Inverse-square repulsion steers agents apart during the encounter
    and a hard backstop guarantees pairwise separation stays above
    min_separation at every recorded frame.
    """
    t = spec.t_h + spec.t_f
    n = spec.num_agents
    center = spec.extent / 2.0
    half = (n + 1) // 2
    starts = np.empty((n, 2))
    vels = np.empty((n, 2))
    travel = 0.7 * spec.extent
    for i in range(n):
        lane = 1.6 * spec.min_separation * (
            (i // 2 if i < half else (i - half) // 2) + 1) * (
            1 if (i % 2 == 0) else -1)
        speed = travel / _window_span(spec) * rng.uniform(0.9, 1.0)
        if i < half:
            starts[i] = (center - travel / 2.0, center + lane)
            vels[i] = (speed, 0.0)
        else:
            starts[i] = (center + lane, center - travel / 2.0)
            vels[i] = (0.0, speed)
    pos = np.empty((t, n, 2))
    pos[0] = _enforce_separation(starts, 1.05 * spec.min_separation)
    gain = 0.35 * spec.min_separation ** 2
    speed_cap = travel / _window_span(spec)
    for f in range(1, t):
        cur = pos[f - 1]
        push = np.zeros((n, 2))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                delta = cur[i] - cur[j]
                dist = max(float(np.hypot(delta[0], delta[1])), 1e-6)
                push[i] += gain * delta / dist ** 3
        norms = np.maximum(np.linalg.norm(push, axis=1, keepdims=True), 1e-12)
        push = push * np.minimum(1.0, speed_cap / norms)
        nxt = cur + (vels + push) * spec.dt
        pos[f] = _enforce_separation(nxt, 1.05 * spec.min_separation)
    return pos


def _enforce_separation(points: np.ndarray, min_dist: float) -> np.ndarray:
    out = points.copy()
    n = out.shape[0]
    for _ in range(12):
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                delta = out[i] - out[j]
                dist = float(np.hypot(delta[0], delta[1]))
                if dist >= min_dist:
                    continue
                moved = True
                if dist < 1e-9:
                    # coincident points get split along x
                    axis = np.array([1.0, 0.0])
                else:
                    axis = delta / dist
                shift = 0.5 * (min_dist - dist)
                out[i] += axis * shift
                out[j] -= axis * shift
        if not moved:
            break
    return out


def _roundabout_paths(spec: ScenarioSpec, rng) -> np.ndarray:
    t = spec.t_h + spec.t_f
    times = spec.dt * np.arange(t)
    pos = np.empty((t, spec.num_agents, 2))
    center = spec.extent / 2.0
    for i in range(spec.num_agents):
        radius = (0.16 + 0.18 * (i + 1) / (spec.num_agents + 1)) * spec.extent
        theta0 = rng.uniform(0.0, 2.0 * math.pi)
        sweep = math.radians(rng.uniform(100.0, 200.0))
        omega = sweep / _window_span(spec)
        theta = theta0 + omega * times
        pos[:, i, 0] = center + radius * np.cos(theta)
        pos[:, i, 1] = center + radius * np.sin(theta)
    return pos


_PATH_BUILDERS = {
    "linear": _linear_paths,
    "turning": _turning_paths,
    "stopping": _stopping_paths,
    "crossing": _crossing_paths,
    "roundabout": _roundabout_paths,
}


def _occupancy_raster(positions: np.ndarray, spec: ScenarioSpec):
    """Binary traversable-region mask painted along every trajectory."""
    size = spec.image_size
    scale = (size - 1) / spec.extent
    affine = np.array([[scale, 0.0, 0.0], [0.0, scale, 0.0]])
    samples = positions.reshape(-1, 2)
    mids = 0.5 * (positions[1:] + positions[:-1]).reshape(-1, 2)
    samples = np.concatenate([samples, mids], axis=0)
    xs = (np.arange(size) + 0.0) / scale
    gx, gy = np.meshgrid(xs, xs)  # gy indexes rows, gx columns
    mask = np.zeros((size, size), dtype=bool)
    road = 0.06 * spec.extent
    for px, py in samples:
        mask |= (gx - px) ** 2 + (gy - py) ** 2 <= road ** 2
    return mask.astype(np.float64), affine


def synth_generate(spec: ScenarioSpec) -> SceneWindow:
    """Seeded kinematic rollout for one scenario recipe."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    positions = _PATH_BUILDERS[spec.kind](spec, rng)
    if spec.noise > 0:
        positions = positions + rng.normal(0.0, spec.noise, positions.shape)
    image = affine = None
    if spec.with_image:
        image, affine = _occupancy_raster(positions, spec)
    scene_id = spec.scene_id or f"{spec.kind}-{spec.seed}"
    window = SceneWindow(
        scene_id=scene_id,
        agent_ids=[f"a{i}" for i in range(spec.num_agents)],
        history=positions[:spec.t_h],
        future=positions[spec.t_h:],
        image=image, affine=affine, dt=spec.dt)
    window.validate()
    return window


def generate_dataset(num_scenes: int, template: ScenarioSpec,
                     kinds=None) -> list[SceneWindow]:
    """num_scenes windows cycling through kinds, seeds template.seed + i."""
    if num_scenes < 1:
        raise ConfigError("num_scenes must be >= 1")
    kinds = tuple(kinds) if kinds else SCENARIO_KINDS
    scenes = []
    for i in range(num_scenes):
        kind = kinds[i % len(kinds)]
        spec = ScenarioSpec(
            kind=kind, num_agents=template.num_agents,
            t_h=template.t_h, t_f=template.t_f, dt=template.dt,
            noise=template.noise, seed=template.seed + i,
            extent=template.extent, with_image=template.with_image,
            image_size=template.image_size,
            min_separation=template.min_separation,
            scene_id=f"{kind}-{i:04d}")
        scenes.append(synth_generate(spec))
    return scenes


def write_dataset(directory, scenes) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for window in scenes:
        target = directory / f"{window.scene_id}.scene"
        write_scene(target, window)
        paths.append(target)
    return paths


def load_dataset(directory) -> list[SceneWindow]:
    directory = Path(directory)
    files = sorted(directory.glob("*.scene"))
    if not files:
        raise DataError(f"no .scene files under {directory}")
    return [parse_scene(p) for p in files]


def split_dataset(scenes, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Seeded shuffle then partition into train/val/test index lists."""
    if len(ratios) != 3:
        raise ConfigError(f"need 3 split ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(scenes)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    train = order[:n_train].tolist()
    val = order[n_train:n_train + n_val].tolist()
    test = order[n_train + n_val:].tolist()
    return train, val, test
