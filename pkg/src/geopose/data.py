"""Synthetic dataset harness: procedural object models, partial noisy views
with ground-truth poses, depth+mask preprocessing, and dataset files on disk.

manifest.json schema (version 1):
  { "version": 1, "model": name, "depth_scale": float, "symmetric": bool,
    "diameter_m": float, "splits": {"train": [lo, hi], "val": [lo, hi]},
    "samples": [{"id", "cloud_ply", "q": [q0,q1,q2,q3], "t": [x,y,z]}] }
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .geometry import (GeometryError, RigidTransform, backproject, estimate_normals,
                       fps, quat_to_rot, random_quat)
from .ply import read_ply, write_ply

MIN_SURVIVORS = 32


class DatasetError(RuntimeError):
    pass


@dataclass
class ObjectModel:
    name: str
    vertices: np.ndarray
    symmetric: bool

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape[0] < 4:
            raise DatasetError("object model needs at least 4 vertices")
        self.diameter = max_pairwise_distance(self.vertices)
        if self.diameter <= 0:
            raise DatasetError("degenerate object model")


@dataclass
class Sample:
    id: int
    cloud: np.ndarray
    normals: np.ndarray
    q: np.ndarray            # gt rotation quaternion (q0..q2 vector, q3 scalar)
    t: np.ndarray            # gt translation
    model_ref: str

    @property
    def gt(self):
        return RigidTransform(quat_to_rot(self.q), self.t)


def max_pairwise_distance(points, block=512):
    best = 0.0
    for i in range(0, len(points), block):
        chunk = points[i:i + block]
        d2 = ((chunk[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def _rng_for(*parts):
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))


# -- procedural models -----------------------------------------------------

def _sample_box_surface(rng, lo, hi, n):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = hi - lo
    areas = np.array([size[1] * size[2], size[1] * size[2],
                      size[0] * size[2], size[0] * size[2],
                      size[0] * size[1], size[0] * size[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = lo + rng.uniform(size=(n, 3)) * size
    axis = face // 2
    pts[np.arange(n), axis] = np.where(face % 2 == 0, lo[axis], hi[axis])
    return pts


def _lbracket(seed, n=1024):
    """Asymmetric L-shaped solid (union of two boxes), surface sampled."""
    rng = _rng_for("lbracket", seed)
    # deliberately unequal arms and thicknesses so no near-symmetry survives
    box_a = (np.array([0.0, 0.0, 0.0]), np.array([0.12, 0.04, 0.02]))
    box_b = (np.array([0.0, 0.0, 0.0]), np.array([0.03, 0.09, 0.05]))

    def inside(pts, lo, hi, eps=1e-12):
        return np.all((pts > lo + eps) & (pts < hi - eps), axis=1)

    pts = []
    while sum(len(p) for p in pts) < n:
        a = _sample_box_surface(rng, *box_a, 256)
        a = a[~inside(a, *box_b)]
        b = _sample_box_surface(rng, *box_b, 256)
        b = b[~inside(b, *box_a)]
        pts.append(np.vstack([a, b]))
    pts = np.vstack(pts)[:n]
    return ObjectModel("lbracket", pts - pts.mean(axis=0), symmetric=False)


def _eggboxoid(seed, n=1024):
    """Superellipsoid with exact 2-fold symmetry about z (half sampled, half
    mirrored by a pi rotation)."""
    rng = _rng_for("eggboxoid", seed)
    half = n // 2
    a, b, c, r = 0.06, 0.04, 0.025, 4.0
    dirs = rng.standard_normal((half, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = (np.abs(dirs[:, 0] / a) ** r + np.abs(dirs[:, 1] / b) ** r
             + np.abs(dirs[:, 2] / c) ** r) ** (-1.0 / r)
    pts = dirs * scale[:, None]
    mirrored = pts * np.array([-1.0, -1.0, 1.0])
    return ObjectModel("eggboxoid", np.vstack([pts, mirrored]), symmetric=True)


def _mug(seed, n=1024):
    """Open cylinder with a handle arc; asymmetric."""
    rng = _rng_for("mug", seed)
    n_body = (3 * n) // 4
    radius, height = 0.035, 0.09
    theta = rng.uniform(0, 2 * np.pi, n_body)
    z = rng.uniform(0, height, n_body)
    bottom = rng.integers(0, 5, n_body) == 0
    rr = np.where(bottom, np.sqrt(rng.uniform(0, 1, n_body)) * radius, radius)
    z = np.where(bottom, 0.0, z)
    body = np.column_stack([rr * np.cos(theta), rr * np.sin(theta), z])
    n_handle = n - n_body
    phi = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, n_handle)
    ring = rng.uniform(0, 2 * np.pi, n_handle)
    r_major, r_minor = 0.022, 0.005
    cx = radius + 0.004
    hx = cx + (r_major + r_minor * np.cos(ring)) * np.cos(phi)
    hz = height / 2 + (r_major + r_minor * np.cos(ring)) * np.sin(phi)
    hy = r_minor * np.sin(ring)
    handle = np.column_stack([hx, hy, hz])
    pts = np.vstack([body, handle])
    return ObjectModel("mug", pts - pts.mean(axis=0), symmetric=False)


def builtin_models(seed=0):
    return [_lbracket(seed), _eggboxoid(seed), _mug(seed)]


def get_model(name, seed=0):
    for m in builtin_models(seed):
        if m.name == name:
            return m
    raise DatasetError(f"unknown model {name!r}")


# -- sample generation -----------------------------------------------------

def gen_sample(model, cfg, index, normals_k=16):
    """One synthetic partial view: random pose, half-space cull, spherical
    occluder, Gaussian noise, recomputed normals. Deterministic in
    (cfg.seed, index)."""
    for attempt in range(10):
        rng = _rng_for(cfg.seed, index, attempt)
        q = random_quat(rng)
        center = np.asarray(cfg.box_center, dtype=np.float64)
        extent = np.asarray(cfg.box_extent, dtype=np.float64)
        t = center + (rng.uniform(size=3) - 0.5) * extent
        gt = RigidTransform(quat_to_rot(q), t)
        pts = gt.apply(model.vertices)

        if cfg.cull_fraction > 0:
            view = rng.standard_normal(3)
            view /= np.linalg.norm(view)
            proj = pts @ view
            keep = proj.argsort(kind="stable")[: int(round(len(pts) * (1 - cfg.cull_fraction)))]
            pts = pts[np.sort(keep)]
        if cfg.occluder_fraction > 0 and len(pts) > 1:
            anchor = pts[rng.integers(len(pts))]
            d = np.linalg.norm(pts - anchor, axis=1)
            n_del = int(round(len(pts) * cfg.occluder_fraction))
            if n_del > 0:
                radius = np.sort(d, kind="stable")[n_del - 1]
                pts = pts[d > radius]
        if len(pts) < MIN_SURVIVORS:
            continue
        if cfg.noise_sigma > 0:
            pts = pts + rng.normal(0.0, cfg.noise_sigma, pts.shape)
        normals, _ = estimate_normals(pts, normals_k, np.zeros(3))
        return Sample(index, pts, normals, q, t, model.name)
    raise DatasetError(f"sample {index}: fewer than {MIN_SURVIVORS} survivors after 10 retries")


def preprocess(depth, mask, K, max_points, normals_k=16):
    """Depth+mask to (cloud, normals): backproject, FPS cap, PCA normals with
    the camera origin as viewpoint."""
    cloud = backproject(depth, mask, K)
    if cloud.shape[0] > max_points:
        cloud = cloud[fps(cloud, max_points, seed=0)]
    normals, _ = estimate_normals(cloud, normals_k, np.zeros(3))
    return cloud, normals


# -- dataset on disk -------------------------------------------------------

def save_dataset(out_dir, model, cfg, train_count, val_count, depth_scale=1.0):
    os.makedirs(out_dir, exist_ok=True)
    total = train_count + val_count
    entries = []
    for i in range(total):
        s = gen_sample(model, cfg, i)
        rel = f"sample_{i:05d}.ply"
        write_ply(os.path.join(out_dir, rel), s.cloud, s.normals)
        entries.append({"id": i, "cloud_ply": rel,
                        "q": [float(v) for v in s.q],
                        "t": [float(v) for v in s.t]})
    manifest = {
        "version": 1,
        "model": model.name,
        "depth_scale": depth_scale,
        "symmetric": model.symmetric,
        "diameter_m": model.diameter,
        "splits": {"train": [0, train_count], "val": [train_count, total]},
        "samples": entries,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=1)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return manifest


def load_dataset(data_dir):
    """Load and validate a dataset; returns (manifest, list of Samples)."""
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"missing manifest: {path}")
    if manifest.get("version") != 1:
        raise DatasetError(f"{path}: unsupported manifest version")
    samples = []
    for entry in manifest["samples"]:
        sid = entry["id"]
        ply_path = os.path.join(data_dir, entry["cloud_ply"])
        if not os.path.exists(ply_path):
            raise DatasetError(f"sample {sid}: missing cloud file {entry['cloud_ply']}")
        cloud, normals = read_ply(ply_path)
        if cloud.shape[0] == 0 or not np.all(np.isfinite(cloud)):
            raise DatasetError(f"sample {sid}: empty or non-finite cloud")
        q = np.asarray(entry["q"], dtype=np.float64)
        t = np.asarray(entry["t"], dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise DatasetError(f"sample {sid}: rotation quaternion is not unit")
        gt = RigidTransform(quat_to_rot(q), t)
        try:
            gt.validate(tol=1e-8)
        except GeometryError as e:
            raise DatasetError(f"sample {sid}: {e}")
        if normals is None:
            normals, _ = estimate_normals(cloud, 16, np.zeros(3))
        samples.append(Sample(sid, cloud, normals, q, t, manifest["model"]))
    if len(samples) != len(manifest["samples"]):
        raise DatasetError("manifest sample count mismatch")
    return manifest, samples


def split_samples(manifest, samples, split):
    lo, hi = manifest["splits"][split]
    return [s for s in samples if lo <= s.id < hi]
