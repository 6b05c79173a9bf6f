"""Synthetic shape corpus, viewpoint occlusion and point cloud file I/O.

Shapes are surface-sampled parametric solids; partial inputs come from a
visibility heuristic that keeps the points whose outward direction (taken
from the shape centroid) agrees best with the view direction. The heuristic
approximates hidden-point removal well for convex-ish shapes and only
roughly for concave ones (table legs may survive a view they would not
survive under true depth-buffer culling). Everything is deterministic under
its seed.

On-disk formats: plain ``x y z`` lines (.xyz) and minimal ascii PLY.
Dataset layout: ``<root>/<split>/<id>_partial.xyz`` plus ``<id>_gt.xyz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .geometry import as_cloud

FAMILIES = ("sphere", "box", "cylinder", "table", "composite")

#: The eight canonical view directions used when building datasets: the six
#: axis directions plus the two main-diagonal directions.
VIEWPOINTS = np.array(
    [
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
        [1.0, 1.0, 1.0], [-1.0, -1.0, -1.0],
    ]
) / np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, math.sqrt(3.0), math.sqrt(3.0)])[:, None]


@dataclass
class SyntheticShapeSpec:
    """Recipe for one ground-truth / partial pair."""

    family: str = "sphere"
    scale: float = 1.0
    seed: int = 0
    gt_points: int = 512
    partial_points: int = 256

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"family must be one of {FAMILIES}")
        if not self.gt_points >= self.partial_points >= 16:
            raise ContractError("need gt_points >= partial_points >= 16")


def generate_shape(spec):
    """Uniform surface samples of the requested parametric shape."""
    rng = np.random.default_rng(spec.seed)
    n = spec.gt_points
    s = spec.scale
    if spec.family == "sphere":
        return _sample_sphere(rng, n, radius=s)
    if spec.family == "box":
        return _sample_boxes(rng, n, [(np.zeros(3), np.array([s, s, s]))])
    if spec.family == "cylinder":
        return _sample_cylinder(rng, n, radius=0.35 * s, height=s)
    if spec.family == "table":
        return _sample_table(rng, n, s)
    return _sample_composite(rng, n, s)


def _sample_sphere(rng, n, radius, center=None):
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radius * dirs
    if center is not None:
        pts += center
    return pts


def _sample_boxes(rng, n, boxes):
    """Area-weighted face sampling over a list of (center, extents) boxes."""
    faces = []
    areas = []
    for center, ext in boxes:
        for axis in range(3):
            for sign in (-1.0, 1.0):
                other = [a for a in range(3) if a != axis]
                faces.append((center, ext, axis, sign, other))
                areas.append(ext[other[0]] * ext[other[1]])
    areas = np.asarray(areas)
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    for i, f in enumerate(choice):
        center, ext, axis, sign, other = faces[f]
        p = np.array(center, dtype=float)
        p[axis] += sign * ext[axis] / 2.0
        p[other[0]] += u[i, 0] * ext[other[0]]
        p[other[1]] += u[i, 1] * ext[other[1]]
        pts[i] = p
    return pts


def _sample_cylinder(rng, n, radius, height):
    lateral = 2.0 * math.pi * radius * height
    cap = math.pi * radius * radius
    total = lateral + 2.0 * cap
    which = rng.uniform(size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if which[i] < lateral / total:
            z = rng.uniform(-height / 2.0, height / 2.0)
            pts[i] = (radius * math.cos(theta[i]), radius * math.sin(theta[i]), z)
        else:
            r = radius * math.sqrt(rng.uniform())
            z = height / 2.0 if which[i] < (lateral + cap) / total else -height / 2.0
            pts[i] = (r * math.cos(theta[i]), r * math.sin(theta[i]), z)
    return pts


def _sample_table(rng, n, s):
    top = (np.array([0.0, 0.0, 0.45 * s]), np.array([s, 0.7 * s, 0.1 * s]))
    leg_ext = np.array([0.08 * s, 0.08 * s, 0.8 * s])
    legs = [
        (np.array([sx * 0.42 * s, sy * 0.27 * s, 0.0]), leg_ext)
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    return _sample_boxes(rng, n, [top, *legs])


def _sample_composite(rng, n, s):
    n_sphere = n // 2
    n_box = n - n_sphere
    center = rng.uniform(-0.2 * s, 0.2 * s, size=3)
    sphere = _sample_sphere(rng, n_sphere, radius=0.45 * s, center=center)
    box = _sample_boxes(
        rng, n_box, [(-center, np.array([0.8 * s, 0.5 * s, 0.6 * s]))]
    )
    return np.concatenate([sphere, box], axis=0)


def occlude_viewpoint(gt, viewpoint, keep):
    """Keep the ``keep`` points most visible from ``viewpoint``.

    Visibility proxy: the dot product between each point's direction from
    the shape centroid and the (normalized) view direction. Ties break by
    lowest index; the surviving points keep their input order.
    """
    pts = as_cloud(gt, "gt")
    n = pts.shape[0]
    if not 1 <= keep <= n:
        raise ContractError(f"occlude_viewpoint: keep={keep} outside [1, {n}]")
    view = np.asarray(viewpoint, dtype=float)
    norm = np.linalg.norm(view)
    if norm == 0:
        raise ContractError("occlude_viewpoint: zero view direction")
    view = view / norm
    offsets = pts - pts.mean(axis=0)
    lengths = np.linalg.norm(offsets, axis=1)
    lengths[lengths == 0] = 1.0
    score = (offsets / lengths[:, None]) @ view
    ranked = np.lexsort((np.arange(n), -score))[:keep]
    return pts[np.sort(ranked)]


def resample_input(cloud, n, seed=0):
    """Force a cloud to exactly ``n`` points.

    Smaller clouds get uniformly chosen duplicate rows appended; larger
    clouds are reduced to a uniformly chosen subset (original order kept).
    """
    pts = as_cloud(cloud)
    rng = np.random.default_rng(seed)
    count = pts.shape[0]
    if n < 1:
        raise ContractError("resample_input: n must be >= 1")
    if n == count:
        return pts.copy()
    if n < count:
        idx = np.sort(rng.choice(count, size=n, replace=False))
        return pts[idx]
    extra = rng.integers(0, count, size=n - count)
    return np.concatenate([pts, pts[extra]], axis=0)


# ---------------------------------------------------------------------------
# File formats


def write_xyz(path, cloud):
    pts = as_cloud(cloud)
    with open(path, "w") as fh:
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(f"{path}: line {lineno}: expected 3 coordinates")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad number") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    return np.asarray(rows)


def write_ply(path, cloud):
    pts = as_cloud(cloud)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {pts.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path):
    """Minimal ascii PLY reader; unknown vertex properties are skipped."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: line 1: not a ply file")
    count = None
    names = []
    body_at = None
    in_vertex = False
    for lineno, line in enumerate(lines[1:], start=2):
        token = line.strip().split()
        if not token:
            continue
        if token[0] == "format":
            if token[1] != "ascii":
                raise ParseError(f"{path}: line {lineno}: only ascii ply supported")
        elif token[0] == "element":
            in_vertex = token[1] == "vertex"
            if in_vertex:
                count = int(token[2])
        elif token[0] == "property" and in_vertex:
            names.append(token[-1])
        elif token[0] == "end_header":
            body_at = lineno
            break
    if body_at is None or count is None:
        raise ParseError(f"{path}: missing end_header or vertex element")
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"{path}: vertex element lacks property {axis}")
    cols = [names.index(a) for a in ("x", "y", "z")]
    rows = []
    for lineno, line in enumerate(lines[body_at:], start=body_at + 1):
        parts = line.split()
        if not parts:
            continue
        if len(rows) == count:
            break
        if len(parts) < len(names):
            raise ParseError(f"{path}: line {lineno}: expected {len(names)} values")
        try:
            rows.append([float(parts[c]) for c in cols])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: bad number") from None
    if len(rows) != count:
        raise ParseError(f"{path}: expected {count} vertices, found {len(rows)}")
    return np.asarray(rows)


def read_cloud(path):
    """Dispatch on extension: .ply via the ply reader, anything else as xyz."""
    if str(path).lower().endswith(".ply"):
        return read_ply(path)
    return read_xyz(path)


# ---------------------------------------------------------------------------
# Dataset helpers


def build_synthetic_dataset(root, split, count, seed=0, gt_points=512,
                            partial_points=512, scale=1.0, keep_fraction=0.55):
    """Write ``count`` occluded shape pairs under ``<root>/<split>/``.

    Families cycle deterministically; the viewpoint for each sample is drawn
    from the eight canonical directions by the seeded rng. Returns the list
    of sample ids.
    """
    out = Path(root) / split
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(count):
        family = FAMILIES[i % len(FAMILIES)]
        spec = SyntheticShapeSpec(
            family=family, scale=scale, seed=int(rng.integers(0, 2**31)),
            gt_points=gt_points, partial_points=partial_points,
        )
        gt = generate_shape(spec)
        view = VIEWPOINTS[int(rng.integers(0, len(VIEWPOINTS)))]
        keep = max(16, int(keep_fraction * gt_points))
        partial = occlude_viewpoint(gt, view, keep)
        partial = resample_input(partial, partial_points, seed=int(rng.integers(0, 2**31)))
        sample_id = f"{i:04d}_{family}"
        write_xyz(out / f"{sample_id}_gt.xyz", gt)
        write_xyz(out / f"{sample_id}_partial.xyz", partial)
        ids.append(sample_id)
    return ids


def load_dataset(directory):
    """Read all ``*_partial.xyz`` / ``*_gt.xyz`` pairs, sorted by id."""
    directory = Path(directory)
    samples = []
    for partial_path in sorted(directory.glob("*_partial.xyz")):
        sample_id = partial_path.name[: -len("_partial.xyz")]
        gt_path = directory / f"{sample_id}_gt.xyz"
        if not gt_path.exists():
            raise ContractError(f"missing ground truth for sample {sample_id!r}")
        samples.append((sample_id, read_xyz(partial_path), read_xyz(gt_path)))
    if not samples:
        raise ContractError(f"no samples found in {directory}")
    return samples
