"""Procedural flat-colored shape scenes with human-free GT triplets
(RGB, sketch, palette) at desk scale.

Rendering is antialiasing-free (a pixel is inside or it isn't) so the edge
map's support is exactly the 1-2 px boundary band. Fill colors are drawn
from per-shape-type base hues with small jitter over a near-fixed dark
background; colors therefore stay largely predictable from the contours,
which is what keeps the sketch -> RGB stage learnable, while the palette
still carries the exact shades.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import ImageGrid, SeededRng, load_png, save_png
from .degrade import DEFAULT_EDGE_TAU, PALETTE_KERNEL, edge_map, pixelate

CANVAS = 32
SHAPE_TYPES = ("circle", "rectangle", "triangle")

BACKGROUND_BASE = np.array([0.08, 0.09, 0.12])
FILL_BASE = {
    "circle": np.array([0.85, 0.25, 0.20]),
    "rectangle": np.array([0.20, 0.75, 0.30]),
    "triangle": np.array([0.25, 0.35, 0.90]),
}
COLOR_JITTER = 0.06
MIN_CHANNEL_SEP = 0.2
MIN_LUMA_SEP = 0.15
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Shape:
    kind: str
    center: tuple
    size: int
    color: tuple


@dataclass(frozen=True)
class SceneRecipe:
    seed: int
    canvas: int
    background: tuple
    shapes: tuple = field(default_factory=tuple)


def _sep_ok(color, others):
    for other in others:
        if np.max(np.abs(color - other)) < MIN_CHANNEL_SEP:
            return False
        if abs(color @ LUMA - other @ LUMA) < MIN_LUMA_SEP:
            return False
    return True


def make_recipe(seed, canvas=CANVAS):
    rng = SeededRng(seed, stream_id=0x5CE)
    bg = np.clip(BACKGROUND_BASE + rng.uniform(-0.03, 0.03, size=3), 0.0, 1.0)
    n_shapes = int(rng.integers(1, 4))
    # distinct kinds per scene: same-kind shapes share a base hue, which
    # would make the pairwise color-separation rejection unsatisfiable
    kind_order = rng.shuffle_index(len(SHAPE_TYPES))
    shapes = []
    used = [bg]
    for k in range(n_shapes):
        kind = SHAPE_TYPES[int(kind_order[k])]
        # half-extent; small enough that every interior pixel sits within
        # the denoiser's receptive field of the shape's contour
        size = int(rng.integers(3, 6))
        cx = int(rng.integers(size + 1, canvas - size - 1))
        cy = int(rng.integers(size + 1, canvas - size - 1))
        for _ in range(64):
            color = np.clip(FILL_BASE[kind]
                            + rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=3),
                            0.0, 1.0)
            if _sep_ok(color, used):
                break
        used.append(color)
        shapes.append(Shape(kind, (cy, cx), size, tuple(color)))
    return SceneRecipe(seed=seed, canvas=canvas, background=tuple(bg),
                       shapes=tuple(shapes))


def _shape_mask(shape, canvas):
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    cy, cx = shape.center
    s = shape.size
    if shape.kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= s * s
    if shape.kind == "rectangle":
        return (np.abs(yy - cy) <= s) & (np.abs(xx - cx) <= max(s - 1, 2))
    # upward triangle: rows cy-s .. cy+s, width grows linearly
    rel = yy - (cy - s)
    half = rel * s / max(2 * s, 1)
    return (rel >= 0) & (rel <= 2 * s) & (np.abs(xx - cx) <= half)


def render(recipe):
    canvas = recipe.canvas
    img = np.tile(np.asarray(recipe.background), (canvas, canvas, 1))
    for shape in recipe.shapes:
        mask = _shape_mask(shape, canvas)
        img[mask] = np.asarray(shape.color)
    return ImageGrid(img)


def gen_scene(seed, canvas=CANVAS, edge_tau=DEFAULT_EDGE_TAU):
    """Deterministic (rgb, sketch, palette) triplet for one seed."""
    recipe = make_recipe(seed, canvas)
    rgb = render(recipe)
    sketch = edge_map(rgb, edge_tau)
    palette = pixelate(rgb, PALETTE_KERNEL)
    return rgb, sketch, palette


@dataclass
class Dataset:
    """In-memory triplet arrays plus the per-item seeds that made them."""

    rgb: np.ndarray      # (N, H, W, 3)
    sketch: np.ndarray   # (N, H, W, 1)
    palette: np.ndarray  # (N, H, W, 3)
    seeds: np.ndarray

    def __len__(self):
        return self.rgb.shape[0]

    def split(self, val_fraction=0.1):
        n_val = max(1, int(round(len(self) * val_fraction)))
        n_train = len(self) - n_val
        tr = Dataset(self.rgb[:n_train], self.sketch[:n_train],
                     self.palette[:n_train], self.seeds[:n_train])
        va = Dataset(self.rgb[n_train:], self.sketch[n_train:],
                     self.palette[n_train:], self.seeds[n_train:])
        return tr, va


def gen_dataset_arrays(n, seed=0, canvas=CANVAS):
    seeds = np.arange(n, dtype=np.int64) + np.int64(seed) * 1_000_003
    rgb = np.empty((n, canvas, canvas, 3))
    sk = np.empty((n, canvas, canvas, 1))
    pal = np.empty((n, canvas, canvas, 3))
    for i, s in enumerate(seeds):
        r, k, p = gen_scene(int(s), canvas)
        rgb[i], sk[i], pal[i] = r.data, k.data, p.data
    return Dataset(rgb, sk, pal, seeds)


def gen_dataset(n, seed, out_dir, canvas=CANVAS):
    """Write n triplets as PNGs plus a manifest; deterministic 90/10 split."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ds = gen_dataset_arrays(n, seed, canvas)
    for sub in ("rgb", "sketch", "palette"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    entries = []
    n_train = n - max(1, int(round(n * 0.1)))
    for i in range(n):
        name = f"{i:04d}.png"
        save_png(os.path.join(out_dir, "rgb", name), ImageGrid(ds.rgb[i]))
        save_png(os.path.join(out_dir, "sketch", name), ImageGrid(ds.sketch[i]))
        save_png(os.path.join(out_dir, "palette", name), ImageGrid(ds.palette[i]))
        entries.append({
            "index": i,
            "seed": int(ds.seeds[i]),
            "split": "train" if i < n_train else "val",
            "rgb": f"rgb/{name}",
            "sketch": f"sketch/{name}",
            "palette": f"palette/{name}",
        })
    manifest = {"n": n, "seed": int(seed), "canvas": canvas, "items": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_dataset(data_dir):
    """Load a gen_dataset directory back into arrays (manifest order)."""
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    items = manifest["items"]
    canvas = manifest["canvas"]
    n = len(items)
    rgb = np.empty((n, canvas, canvas, 3))
    sk = np.empty((n, canvas, canvas, 1))
    pal = np.empty((n, canvas, canvas, 3))
    seeds = np.empty(n, dtype=np.int64)
    split = []
    for i, item in enumerate(items):
        rgb[i] = load_png(os.path.join(data_dir, item["rgb"])).data
        sk[i] = load_png(os.path.join(data_dir, item["sketch"])).data
        pal[i] = load_png(os.path.join(data_dir, item["palette"])).data
        seeds[i] = item["seed"]
        split.append(item["split"])
    ds = Dataset(rgb, sk, pal, seeds)
    return ds, np.asarray(split)
