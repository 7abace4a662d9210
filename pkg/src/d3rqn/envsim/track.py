"""Track geometry: occupancy grid, road centre lines, start poses, and the plain-text track file.

Track file layout (UTF-8)::

    # comment
    name = default
    cell_size = 0.5
    center = x y; x y; ...      one line per centre polyline, metres
    train = x y heading_deg     one line per training start pose
    test = x y heading_deg      one line per test start pose
    ---
    ####....####                grid rows; row 0 covers y in [0, cell_size)

Grid characters: ``.`` road, ``#`` off-road, ``O`` obstacle, ``C`` road
cell on the centre line. When no ``center`` line is given the centres of
the ``C`` cells are used as the centre geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from d3rqn.errors import ConfigError

ROAD, OFFROAD, OBSTACLE = 0, 1, 2
# observation value per cell code
CELL_VALUES = np.array([0.0, 0.5, 1.0])
_CHARS = {".": ROAD, "C": ROAD, "#": OFFROAD, "O": OBSTACLE}


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # radians


@dataclass
class RoadWorld:
    grid: np.ndarray  # (rows, cols) uint8 cell codes
    cell_size: float
    centerlines: list[np.ndarray]
    train_starts: list[Pose]
    test_starts: list[Pose]
    name: str = "track"
    seg_a: np.ndarray = field(init=False, repr=False)
    seg_b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.centerlines:
            raise ConfigError("track needs at least one centre line")
        a, b = [], []
        for line in self.centerlines:
            line = np.asarray(line, dtype=np.float64).reshape(-1, 2)
            if len(line) == 1:
                a.append(line)
                b.append(line)
            else:
                a.append(line[:-1])
                b.append(line[1:])
        self.seg_a = np.concatenate(a)
        self.seg_b = np.concatenate(b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def size_m(self) -> tuple[float, float]:
        rows, cols = self.grid.shape
        return cols * self.cell_size, rows * self.cell_size

    def cell_at(self, x: float, y: float) -> int:
        col = math.floor(x / self.cell_size)
        row = math.floor(y / self.cell_size)
        rows, cols = self.grid.shape
        if 0 <= row < rows and 0 <= col < cols:
            return int(self.grid[row, col])
        return OFFROAD

    def cells_at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        cols = np.floor(xs / self.cell_size).astype(np.int64)
        rows = np.floor(ys / self.cell_size).astype(np.int64)
        nr, nc = self.grid.shape
        inside = (rows >= 0) & (rows < nr) & (cols >= 0) & (cols < nc)
        out = np.full(xs.shape, OFFROAD, dtype=np.uint8)
        out[inside] = self.grid[rows[inside], cols[inside]]
        return out

    def distance_to_center(self, x: float, y: float) -> float:
        return segments_distance(np.array([x, y]), self.seg_a, self.seg_b)

    def starts(self, mode: str) -> list[Pose]:
        if mode == "train":
            return self.train_starts
        if mode == "test":
            return self.test_starts
        raise ConfigError(f"mode must be 'train' or 'test', got {mode!r}")

    def validate(self) -> None:
        for mode in ("train", "test"):
            for p in self.starts(mode):
                if self.cell_at(p.x, p.y) != ROAD:
                    raise ConfigError(f"{mode} start ({p.x}, {p.y}) is not on a road cell")
        for line in self.centerlines:
            for x, y in _densify(np.asarray(line).reshape(-1, 2), self.cell_size / 4):
                if self.cell_at(x, y) != ROAD:
                    raise ConfigError(f"centre line passes through a blocked cell at ({x:.2f}, {y:.2f})")


def segments_distance(p: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> float:
    """Exact Euclidean distance from point ``p`` to the nearest of many segments."""
    d = seg_b - seg_a
    ap = p - seg_a
    len2 = np.einsum("ij,ij->i", d, d)
    safe = np.where(len2 > 0, len2, 1.0)
    u = np.clip(np.einsum("ij,ij->i", ap, d) / safe, 0.0, 1.0)
    u = np.where(len2 > 0, u, 0.0)
    closest = seg_a + u[:, None] * d
    diff = p - closest
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff))))


def distance_to_center(position, polyline) -> float:
    line = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if len(line) == 0:
        raise ConfigError("polyline must not be empty")
    if len(line) == 1:
        return float(np.hypot(*(np.asarray(position) - line[0])))
    return segments_distance(np.asarray(position, dtype=np.float64), line[:-1], line[1:])


def _densify(line: np.ndarray, step: float) -> list[tuple[float, float]]:
    pts = [tuple(line[0])]
    for a, b in zip(line[:-1], line[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / step)))
        for k in range(1, n + 1):
            q = a + (b - a) * k / n
            pts.append((float(q[0]), float(q[1])))
    return pts


def _parse_pose(text: str, lineno: int) -> Pose:
    parts = text.split()
    if len(parts) != 3:
        raise ConfigError(f"line {lineno}: start pose needs 'x y heading_deg'")
    x, y, h = (float(v) for v in parts)
    return Pose(x, y, math.radians(h))


def parse_track(text: str, source: str = "<track>") -> RoadWorld:
    header, sep, body = text.partition("\n---\n")
    if not sep:
        raise ConfigError(f"{source}: missing '---' line between header and grid")
    name, cell_size = "track", None
    centers, train, test = [], [], []
    for lineno, raw in enumerate(header.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key == "name":
            name = value
        elif key == "cell_size":
            cell_size = float(value)
        elif key == "center":
            pts = [tuple(float(v) for v in p.split()) for p in value.split(";") if p.strip()]
            if any(len(p) != 2 for p in pts):
                raise ConfigError(f"{source}:{lineno}: centre points need two coordinates")
            centers.append(np.array(pts, dtype=np.float64))
        elif key == "train":
            train.append(_parse_pose(value, lineno))
        elif key == "test":
            test.append(_parse_pose(value, lineno))
        else:
            raise ConfigError(f"{source}:{lineno}: unknown track key {key!r}")
    if cell_size is None or cell_size <= 0:
        raise ConfigError(f"{source}: cell_size must be given and positive")
    rows = [r for r in body.splitlines() if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{source}: grid rows must be non-empty and equally long")
    grid = np.empty((len(rows), len(rows[0])), dtype=np.uint8)
    hints = []
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch not in _CHARS:
                raise ConfigError(f"{source}: grid row {r}: unknown cell character {ch!r}")
            grid[r, c] = _CHARS[ch]
            if ch == "C":
                hints.append(((c + 0.5) * cell_size, (r + 0.5) * cell_size))
    if not centers:
        centers = [np.array([p]) for p in hints]
    world = RoadWorld(grid, cell_size, centers, train, test, name)
    world.validate()
    return world


def format_track(world: RoadWorld) -> str:
    lines = [f"name = {world.name}", f"cell_size = {world.cell_size:g}"]
    for line in world.centerlines:
        lines.append("center = " + "; ".join(f"{x:g} {y:g}" for x, y in np.asarray(line)))
    for key, poses in (("train", world.train_starts), ("test", world.test_starts)):
        for p in poses:
            lines.append(f"{key} = {p.x:g} {p.y:g} {math.degrees(p.heading):g}")
    lines.append("---")
    chars = np.array([".", "#", "O"])
    lines += ["".join(row) for row in chars[world.grid]]
    return "\n".join(lines) + "\n"


def load_track(path: str | Path) -> RoadWorld:
    path = Path(path)
    return parse_track(path.read_text(encoding="utf-8"), str(path))


def bundled_track(name: str = "default") -> RoadWorld:
    ref = resources.files("d3rqn.envsim") / "tracks" / f"{name}.track"
    if not ref.is_file():
        raise ConfigError(f"no bundled track named {name!r}")
    return parse_track(ref.read_text(encoding="utf-8"), f"{name}.track")


def build_default_track() -> RoadWorld:
    """Rectangular loop with a connecting side street and parked-car obstacles.

    60 x 40 cells at 0.5 m. This is the generator behind ``tracks/default.track``.
    """
    cell = 0.5
    cols, rows = 60, 40
    loop = np.array([(4.0, 4.0), (26.0, 4.0), (26.0, 16.0), (4.0, 16.0), (4.0, 4.0)])
    side = np.array([(15.0, 4.0), (15.0, 16.0)])
    grid = np.full((rows, cols), OFFROAD, dtype=np.uint8)
    loop_a, loop_b = loop[:-1], loop[1:]
    for r in range(rows):
        for c in range(cols):
            p = np.array([(c + 0.5) * cell, (r + 0.5) * cell])
            if segments_distance(p, loop_a, loop_b) <= 2.0 or segments_distance(p, side[:1], side[1:]) <= 1.5:
                grid[r, c] = ROAD
    # parked cars: 1 x 3 cells hugging the road edge
    for r, c0 in ((4, 16), (35, 40), (35, 10)):
        grid[r, c0:c0 + 3] = OBSTACLE
    for r0, c in ((14, 4), (22, 55)):
        grid[r0:r0 + 3, c] = OBSTACLE
    deg = math.radians
    train = [Pose(6.0, 4.0, 0.0), Pose(11.0, 4.0, 0.0), Pose(19.0, 4.0, 0.0), Pose(23.0, 4.0, 0.0),
             Pose(26.0, 7.0, deg(90)), Pose(26.0, 12.0, deg(90)),
             Pose(22.0, 16.0, deg(180)), Pose(11.0, 16.0, deg(180)),
             Pose(4.0, 13.0, deg(-90)), Pose(4.0, 8.0, deg(-90))]
    test = [Pose(8.5, 4.0, 0.0), Pose(17.0, 4.0, 0.0), Pose(21.0, 4.0, 0.0),
            Pose(26.0, 9.5, deg(90)), Pose(26.0, 14.0, deg(90)),
            Pose(18.0, 16.0, deg(180)), Pose(8.0, 16.0, deg(180)), Pose(13.0, 16.0, deg(180)),
            Pose(4.0, 11.0, deg(-90)), Pose(4.0, 6.0, deg(-90))]
    world = RoadWorld(grid, cell, [loop, side], train, test, "default")
    world.validate()
    return world
