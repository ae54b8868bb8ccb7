"""Synthetic referring-video data: moving shapes, exact masks, templated expressions.

Two expression types are produced.  *Appearance* samples refer to a shape
whose (kind, colour) is unique in the scene.  *Temporal* samples always
contain a distractor with the target's kind and colour but a different
motion, so only the motion phrase identifies the target.

On-disk layout written by :func:`make_dataset`::

    manifest.jsonl      one JSON object per sample
    masks.rle           "<id> <frame> <H>x<W> <run> <run> ..." per frame
    frames/<id>.bin     T x 3 x H x W float64 tensor record
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .serialize import load_tensor, save_tensor

KINDS = ("circle", "square", "triangle")
PALETTE = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.2, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.15),
    "purple": (0.6, 0.2, 0.8),
    "orange": (1.0, 0.55, 0.1),
    "white": (0.95, 0.95, 0.95),
    "cyan": (0.1, 0.85, 0.9),
}
COLORS = tuple(PALETTE)
MOTIONS = ("static", "left", "right", "up", "down", "shrink", "grow", "appear_then_move")
BACKGROUND = 0.08

APPEARANCE_TEMPLATES = (
    "the {color} {kind}",
    "a {color} {kind}",
    "the {color} {kind} in the video",
    "find the {color} {kind}",
    "segment the {kind} that is {color}",
    "look at the {color} colored {kind} shape",
    "which object is the {color} {kind}",
    "please show me one {color} {kind} here",
)
MOTION_PHRASES = {
    "static": ("that stays still", "that does not move", "resting in place"),
    "left": ("that moves left", "moving to the left", "sliding toward the left side"),
    "right": ("that moves right", "moving to the right", "sliding toward the right side"),
    "up": ("that moves up", "moving upward", "rising toward the top"),
    "down": ("that moves down", "moving downward", "falling toward the bottom"),
    "shrink": ("that shrinks", "getting smaller", "that keeps shrinking over time"),
    "grow": ("that grows", "getting bigger", "that keeps growing over time"),
    "appear_then_move": ("that appears and then moves right", "that shows up later and moves",
                         "that enters late then slides right"),
}


def lexicon() -> list[str]:
    words = set(KINDS) | set(COLORS)
    for tpl in APPEARANCE_TEMPLATES:
        words |= set(tpl.split())
    for phrases in MOTION_PHRASES.values():
        for p in phrases:
            words |= set(p.split())
    words -= {"{color}", "{kind}"}
    return sorted(words)


SCENE_REDRAWS = 20
# bounding-circle radius of each kind relative to its size parameter
_EXTENT = {"circle": 1.0, "square": 0.9 * math.sqrt(2.0), "triangle": math.sqrt(2.0)}


@dataclass
class ShapeSpec:
    kind: str
    color: str
    size: float
    motion: str


@dataclass
class SceneSpec:
    shapes: list[ShapeSpec]
    referred_index: int
    seed: int
    speed: float = 2.0
    size_rate: float = 0.5

    def validate(self) -> None:
        if not 0 <= self.referred_index < len(self.shapes):
            raise ContractError("referred_index outside the shape list")
        for s in self.shapes:
            if s.kind not in KINDS or s.color not in PALETTE or s.motion not in MOTIONS:
                raise ContractError(f"invalid shape spec {s}")


@dataclass
class Sample:
    id: str
    frames: np.ndarray       # (T, 3, H, W)
    expression: str
    masks: np.ndarray        # (T, H, W) uint8
    split: str               # "appearance" or "temporal"
    scene: SceneSpec | None = None
    boxes: np.ndarray = field(default=None, repr=False)
    flags: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.boxes is None or self.flags is None:
            self.boxes, self.flags = boxes_from_masks(self.masks)


def boxes_from_masks(masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tight normalised cxcywh box per frame and a visibility flag."""
    t, h, w = masks.shape
    boxes = np.zeros((t, 4))
    flags = np.zeros(t)
    for k in range(t):
        ys, xs = np.nonzero(masks[k])
        if ys.size == 0:
            continue
        x0, x1 = xs.min() / w, (xs.max() + 1) / w
        y0, y1 = ys.min() / h, (ys.max() + 1) / h
        boxes[k] = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
        flags[k] = 1.0
    return boxes, flags


def downsample_masks(masks: np.ndarray, stride: int = 4) -> np.ndarray:
    """Binary masks at 1/stride resolution: a cell is on when at least half its pixels are."""
    t, h, w = masks.shape
    frac = masks.reshape(t, h // stride, stride, w // stride, stride).mean(axis=(2, 4))
    return (frac >= 0.5).astype(np.float64)


def rasterize(kind: str, cx: float, cy: float, size: float, h: int, w: int) -> np.ndarray:
    """Pixel-centre sampling of one shape."""
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    if kind == "circle":
        return dx * dx + dy * dy <= size * size
    if kind == "square":
        half = 0.9 * size
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if kind == "triangle":
        return (dy >= -size) & (dy <= size) & (np.abs(dx) <= (dy + size) / 2.0)
    raise ContractError(f"unknown shape kind {kind!r}")


def _trajectory(shape: ShapeSpec, start: tuple[float, float], t_count: int, speed: float, size_rate: float):
    """Per-frame (cx, cy, size, visible)."""
    cx0, cy0 = start
    out = []
    hidden = max(1, t_count // 3)
    for t in range(t_count):
        cx, cy, size, vis = cx0, cy0, shape.size, True
        m = shape.motion
        if m == "left":
            cx -= speed * t
        elif m == "right":
            cx += speed * t
        elif m == "up":
            cy -= speed * t
        elif m == "down":
            cy += speed * t
        elif m == "shrink":
            size -= size_rate * t
        elif m == "grow":
            size += size_rate * t
        elif m == "appear_then_move":
            vis = t >= hidden
            cx += speed * max(0, t - hidden)
        out.append((cx, cy, size, vis))
    return out


def _fits(traj, kind: str, h: int, w: int) -> bool:
    for cx, cy, size, _ in traj:
        e = _EXTENT[kind] * size
        if cx - e < 0 or cx + e > w or cy - e < 0 or cy + e > h or size < 2:
            return False
    return True


def _apart(ta, ka, tb, kb, margin: float = 2.0) -> bool:
    for (ax, ay, asz, av), (bx, by, bsz, bv) in zip(ta, tb):
        if av and bv and math.hypot(ax - bx, ay - by) < _EXTENT[ka] * asz + _EXTENT[kb] * bsz + margin:
            return False
    return True


def generate(spec: SceneSpec, t_count: int = 8, height: int = 64, width: int = 64,
             expression_type: str = "appearance", sample_id: str = "sample", template: int | None = None,
             max_attempts: int = 10, placements: int = 200) -> Sample:
    """Render one clip; retries with slower motion when the shapes cannot be placed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    speed, rate = spec.speed, spec.size_rate
    trajs = None
    for _ in range(max_attempts):
        for _ in range(placements):
            cand = []
            ok = True
            for s in spec.shapes:
                start = (rng.uniform(0, width), rng.uniform(0, height))
                tr = _trajectory(s, start, t_count, speed, rate)
                if not _fits(tr, s.kind, height, width) or not all(
                        _apart(tr, s.kind, ot, os_.kind) for ot, os_ in zip(cand, spec.shapes)):
                    ok = False
                    break
                cand.append(tr)
            if ok:
                trajs = cand
                break
        if trajs is not None:
            break
        speed *= 0.75
        rate *= 0.75
    if trajs is None:
        raise ContractError(f"could not place shapes of scene seed {spec.seed} after {max_attempts} attempts")

    frames = np.full((t_count, 3, height, width), BACKGROUND)
    masks = np.zeros((t_count, height, width), dtype=np.uint8)
    for idx, (s, tr) in enumerate(zip(spec.shapes, trajs)):
        color = np.asarray(PALETTE[s.color])[:, None, None]
        for t, (cx, cy, size, vis) in enumerate(tr):
            if not vis:
                continue
            m = rasterize(s.kind, cx, cy, size, height, width)
            frames[t] = np.where(m[None], color, frames[t])
            if idx == spec.referred_index:
                masks[t] = m
    target = spec.shapes[spec.referred_index]
    expression = render_expression(target, expression_type, rng if template is None else template)
    return Sample(sample_id, frames, expression, masks, expression_type, spec)


def render_expression(shape: ShapeSpec, expression_type: str, choice) -> str:
    pick = (lambda n: int(choice.integers(n))) if isinstance(choice, np.random.Generator) else (lambda n: choice % n)
    if expression_type == "appearance":
        tpl = APPEARANCE_TEMPLATES[pick(len(APPEARANCE_TEMPLATES))]
        return tpl.format(color=shape.color, kind=shape.kind)
    if expression_type == "temporal":
        phrases = MOTION_PHRASES[shape.motion]
        return f"the {shape.color} {shape.kind} {phrases[pick(len(phrases))]}"
    raise ContractError(f"unknown expression type {expression_type!r}")


def random_scene(rng: np.random.Generator, expression_type: str, num_shapes: int, seed: int,
                 size_range: tuple[float, float] = (6.0, 9.0)) -> SceneSpec:
    """Scene whose target is identifiable exactly by the requested expression type."""
    def size():
        return float(rng.integers(int(size_range[0] * 2), int(size_range[1] * 2) + 1)) / 2.0

    kind = KINDS[rng.integers(len(KINDS))]
    color = COLORS[rng.integers(len(COLORS))]
    motion = MOTIONS[rng.integers(len(MOTIONS))]
    shapes = [ShapeSpec(kind, color, size(), motion)]
    if expression_type == "temporal":
        others = [m for m in MOTIONS if m != motion]
        shapes.append(ShapeSpec(kind, color, size(), others[rng.integers(len(others))]))
    taken = {(kind, color)}
    while len(shapes) < num_shapes:
        k, c = KINDS[rng.integers(len(KINDS))], COLORS[rng.integers(len(COLORS))]
        if (k, c) in taken:
            continue
        taken.add((k, c))
        shapes.append(ShapeSpec(k, c, size(), MOTIONS[rng.integers(len(MOTIONS))]))
    order = rng.permutation(len(shapes))
    shapes = [shapes[i] for i in order]
    return SceneSpec(shapes, int(np.flatnonzero(order == 0)[0]), seed)


def sample_seed(seed: int, split: str, index: int) -> int:
    code = {"train": 0, "val": 1}[split]
    return int(np.random.SeedSequence([seed, code, index]).generate_state(1)[0])


# ----------------------------------------------------------------- files

def encode_rle(mask: np.ndarray) -> list[int]:
    """Alternating run lengths over the row-major mask, starting with a 0-run."""
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return runs


def decode_rle(runs, h: int, w: int) -> np.ndarray:
    flat = np.zeros(h * w, dtype=np.uint8)
    pos, val = 0, 0
    for r in runs:
        if val:
            flat[pos:pos + r] = 1
        pos += r
        val ^= 1
    if pos != h * w:
        raise ContractError(f"RLE covers {pos} pixels, expected {h * w}")
    return flat.reshape(h, w)


def mask_lines(sample_id: str, masks: np.ndarray) -> list[str]:
    _, h, w = masks.shape
    return [f"{sample_id} {t} {h}x{w} " + " ".join(map(str, encode_rle(m))) for t, m in enumerate(masks)]


def read_mask_file(path) -> dict[str, np.ndarray]:
    frames: dict[str, dict[int, np.ndarray]] = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            sid, t, shape = parts[0], int(parts[1]), parts[2]
            h, w = (int(v) for v in shape.split("x"))
            frames.setdefault(sid, {})[t] = decode_rle([int(v) for v in parts[3:]], h, w)
    return {sid: np.stack([d[t] for t in sorted(d)]) for sid, d in frames.items()}


def make_dataset(out_dir, n_train: int, n_val: int, temporal_fraction: float = 1.0, seed: int = 0,
                 num_frames: int = 8, height: int = 64, width: int = 64, num_shapes: int = 3) -> Path:
    """Write train and val splits plus a manifest; returns the manifest path."""
    if n_train < 1 or n_val < 1:
        raise ContractError("n_train and n_val must be >= 1")
    out = Path(out_dir)
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    manifest_path = out / "manifest.jsonl"
    mask_path = out / "masks.rle"
    records, lines = [], []
    # shape sizes scale with the frame so small clips still fit every shape
    scale = min(height, width) / 64.0
    size_range = (6.0 * scale, 9.0 * scale)
    for split, count in (("train", n_train), ("val", n_val)):
        order = np.random.default_rng([seed, 7, len(split)]).permutation(count)
        n_temp = int(round(temporal_fraction * count))
        temporal = set(order[:n_temp].tolist())
        for i in range(count):
            s_seed = sample_seed(seed, split, i)
            rng = np.random.default_rng(s_seed)
            etype = "temporal" if i in temporal else "appearance"
            sid = f"{split}_{i:05d}"
            for redraw in range(SCENE_REDRAWS):
                # a crowded draw that cannot be placed is replaced by the next draw from the same stream
                scene = random_scene(rng, etype, num_shapes, s_seed, size_range)
                try:
                    sample = generate(scene, num_frames, height, width, etype, sid)
                    break
                except ContractError:
                    if redraw == SCENE_REDRAWS - 1:
                        raise
            rel = f"frames/{sid}.bin"
            path = out / rel
            try:
                save_tensor(path, sample.frames)
            except OSError as exc:
                raise OSError(f"failed writing {path}: {exc}") from exc
            lines.extend(mask_lines(sid, sample.masks))
            records.append({"id": sid, "split": split, "expression": sample.expression,
                            "expression_type": etype, "files": {"frames": rel, "masks": "masks.rle"},
                            "scene": asdict(scene)})
    try:
        mask_path.write_text("\n".join(lines) + "\n")
        with open(manifest_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset files under {out}: {exc}") from exc
    return manifest_path


def read_manifest(root) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def scene_from_dict(d: dict) -> SceneSpec:
    return SceneSpec([ShapeSpec(**s) for s in d["shapes"]], d["referred_index"], d["seed"],
                     d.get("speed", 2.0), d.get("size_rate", 0.5))


def load_samples(root, split: str | None = None, limit: int | None = None) -> list[Sample]:
    root = Path(root)
    records = [r for r in read_manifest(root) if split is None or r["split"] == split]
    if limit is not None:
        records = records[:limit]
    masks = read_mask_file(root / "masks.rle")
    out = []
    for rec in records:
        frames = load_tensor(root / rec["files"]["frames"])
        out.append(Sample(rec["id"], frames, rec["expression"], masks[rec["id"]],
                          rec["expression_type"], scene_from_dict(rec["scene"])))
    return out


def audit_distractors(records: list[dict]) -> list[str]:
    """Ids of temporal samples lacking a same-(kind, colour) non-target shape."""
    bad = []
    for rec in records:
        if rec["expression_type"] != "temporal":
            continue
        shapes = rec["scene"]["shapes"]
        tgt = shapes[rec["scene"]["referred_index"]]
        twins = [s for i, s in enumerate(shapes) if i != rec["scene"]["referred_index"]
                 and (s["kind"], s["color"]) == (tgt["kind"], tgt["color"]) and s["motion"] != tgt["motion"]]
        if not twins:
            bad.append(rec["id"])
    return bad
