"""Self-verification suites: gradient checks, assignment oracle, metric oracles.

Every oracle here is computed independently of the code it checks
(finite differences, permutation enumeration, per-pixel loops).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import metrics as M
from . import nn
from . import tensor as T
from .config import Config
from .gradcheck import numerical_grad, relative_error
from .heads import TrajectoryPrediction
from .matching import assignment_cost, hungarian
from .model import SOCModel
from .tensor import Tensor, new_tape

GRAD_TOL = 1e-4
METRIC_TOL = 1e-12


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}\t{self.suite}\t{self.name}\t{self.value:.3e}\t{self.detail}"


def joint_gradcheck(fn: Callable[[], Tensor], inputs: list[Tensor], h: float = 1e-5,
                    coords: dict[int, list[int]] | None = None, skip_kinks: bool = False):
    """Relative error of all (selected) input coordinates taken together.

    With ``skip_kinks`` the coordinates whose central differences at ``h``
    and ``h / 10`` disagree (a ReLU or max switching inside the stencil) are
    left out, and ``(error, n_skipped)`` is returned.
    """
    new_tape()
    for t in inputs:
        t.grad = None
    fn().backward()
    ana, num, fine = [], [], []
    for k, t in enumerate(inputs):
        sel = None if coords is None else coords.get(k)
        g = np.zeros(t.size) if t.grad is None else np.ravel(t.grad)
        ana.append(g if sel is None else g[sel])
        num.append(numerical_grad(fn, t, h, sel))
        if skip_kinks:
            fine.append(numerical_grad(fn, t, h / 10, sel))
    a, n = np.concatenate(ana), np.concatenate(num)
    if not skip_kinks:
        return relative_error(a, n)
    f = np.concatenate(fine)
    smooth = np.abs(n - f) <= 1e-6 * np.maximum(1.0, np.abs(f))
    return relative_error(a[smooth], n[smooth]), int((~smooth).sum())


def _leaf(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def _away(rng, shape, gap: float = 0.1) -> np.ndarray:
    """Random values at least ``gap`` away from zero (keeps kinks out of reach)."""
    x = rng.normal(size=shape)
    return np.sign(x) * (np.abs(x) + gap)


def _scalarize(rng, out_shape):
    w = rng.normal(size=out_shape)
    return lambda y: (y * w).sum()


# ----------------------------------------------------------------- op catalogue

def _op_cases() -> dict[str, Callable]:
    """name -> builder(rng) returning (inputs, fn producing the raw op output)."""
    def unary(op, sample=lambda r: r.normal(size=(3, 4))):
        def build(r):
            x = _leaf(sample(r))
            return [x], lambda: op(x)
        return build

    def binary(op, sa=lambda r: r.normal(size=(3, 4)), sb=lambda r: r.normal(size=(4,))):
        def build(r):
            a, b = _leaf(sa(r)), _leaf(sb(r))
            return [a, b], lambda: op(a, b)
        return build

    def maxmin(op):
        def build(r):
            a = r.normal(size=(3, 4))
            b = a + _away(r, (3, 4))
            a, b = _leaf(a), _leaf(b)
            return [a, b], lambda: op(a, b)
        return build

    def conv(stride, padding, k):
        def build(r):
            x = _leaf(r.normal(size=(2, 3, 6, 5)))
            w = _leaf(r.normal(size=(4, 3, k, k)))
            b = _leaf(r.normal(size=(4,)))
            return [x, w, b], lambda: T.conv2d(x, w, b, stride=stride, padding=padding)
        return build

    def idx_fancy(r):
        x = _leaf(r.normal(size=(5, 3)))
        ids = r.integers(0, 5, size=7)
        return [x], lambda: T.index(x, ids)

    def take(r):
        x = _leaf(r.normal(size=(6, 4)))
        ids = r.integers(0, 6, size=(2, 5))
        return [x], lambda: T.take(x, ids)

    def layer_norm(r):
        x, g, b = _leaf(r.normal(size=(3, 5))), _leaf(r.normal(size=5)), _leaf(r.normal(size=5))
        return [x, g, b], lambda: T.layer_norm(x, g, b)

    def concat(r):
        a, b = _leaf(r.normal(size=(2, 3))), _leaf(r.normal(size=(4, 3)))
        return [a, b], lambda: T.concat([a, b], axis=0)

    def stack(r):
        a, b = _leaf(r.normal(size=(2, 3))), _leaf(r.normal(size=(2, 3)))
        return [a, b], lambda: T.stack([a, b], axis=1)

    pos = lambda r: r.uniform(0.5, 2.0, size=(3, 4))  # noqa: E731
    return {
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": binary(T.div, sb=lambda r: _away(r, (4,), 0.5)),
        "neg": unary(T.neg),
        "power": unary(lambda x: T.power(x, 2.5), pos),
        "exp": unary(T.exp),
        "log": unary(T.log, pos),
        "sqrt": unary(T.sqrt, pos),
        "sigmoid": unary(T.sigmoid, lambda r: 4 * r.normal(size=(3, 4))),
        "relu": unary(T.relu, lambda r: _away(r, (3, 4))),
        "softplus": unary(T.softplus, lambda r: 4 * r.normal(size=(3, 4))),
        "log_sigmoid": unary(T.log_sigmoid, lambda r: 4 * r.normal(size=(3, 4))),
        "absolute": unary(T.absolute, lambda r: _away(r, (3, 4))),
        "maximum": maxmin(T.maximum),
        "minimum": maxmin(T.minimum),
        "matmul": binary(T.matmul, lambda r: r.normal(size=(2, 3, 4)), lambda r: r.normal(size=(4, 5))),
        "sum": unary(lambda x: T.sum(x, axis=1, keepdims=True)),
        "mean": unary(lambda x: T.mean(x, axis=0)),
        "reshape": unary(lambda x: T.reshape(x, (4, 3))),
        "transpose": unary(lambda x: T.transpose(x, (1, 0))),
        "concat": concat,
        "stack": stack,
        "index_basic": unary(lambda x: T.index(x, (slice(1, 3), 2))),
        "index_fancy": idx_fancy,
        "take": take,
        "softmax": unary(lambda x: T.softmax(x, axis=-1)),
        "log_softmax": unary(lambda x: T.log_softmax(x, axis=0)),
        "layer_norm": layer_norm,
        "conv2d_3x3_s1_p1": conv(1, 1, 3),
        "conv2d_3x3_s2_p1": conv(2, 1, 3),
        "conv2d_1x1": conv(1, 0, 1),
        "bilinear_resize": unary(lambda x: T.bilinear_resize(x, 5, 7), lambda r: r.normal(size=(2, 3, 4))),
        "upsample2x": unary(T.upsample2x, lambda r: r.normal(size=(2, 3, 3))),
        "avg_pool2d": unary(lambda x: T.avg_pool2d(x, 2), lambda r: r.normal(size=(1, 2, 4, 6))),
    }


def _module_cases() -> dict[str, Callable]:
    def attention(r):
        attn = nn.MultiheadAttention(8, 2, r)
        x, y = _leaf(r.normal(size=(3, 8))), _leaf(r.normal(size=(5, 8)))
        return [x, y, attn.q.weight, attn.k.weight], lambda: attn(x, y)

    def encoder_layer(r):
        layer = nn.EncoderLayer(8, 2, r)
        x = _leaf(r.normal(size=(4, 8)))
        pos = r.normal(size=(4, 8))
        return [x, layer.ffn.fc1.weight], lambda: layer(x, pos)

    def decoder_layer(r):
        layer = nn.DecoderLayer(8, 2, r)
        q, mem = _leaf(r.normal(size=(3, 8))), _leaf(r.normal(size=(6, 8)))
        return [q, mem], lambda: layer(q, mem)

    return {"multihead_attention": attention, "encoder_layer": encoder_layer, "decoder_layer": decoder_layer}


def gradcheck_suite(cases: dict[str, Callable], suite: str, instances: int = 20, seed: int = 0,
                    h: float = 1e-5) -> list[CheckResult]:
    results = []
    for name, build in cases.items():
        worst = 0.0
        for i in range(instances):
            r = np.random.default_rng([seed, i, len(name)])
            inputs, op = build(r)
            with T.no_grad():
                shape = op().shape
            scal = _scalarize(r, shape)
            worst = max(worst, joint_gradcheck(lambda: scal(op()), inputs, h))
        results.append(CheckResult(suite, name, worst < GRAD_TOL, worst, f"{instances} instances"))
    return results


def gradcheck_ops(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    return gradcheck_suite(_op_cases(), "gradcheck-op", instances, seed)


def gradcheck_modules(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    return gradcheck_suite(_module_cases(), "gradcheck-module", instances, seed)


# ----------------------------------------------------------------- losses

def random_boxes(r, shape, margin: float = 1e-3) -> np.ndarray:
    """cxcywh boxes inside the unit square."""
    c = r.uniform(0.25, 0.75, size=shape + (2,))
    s = r.uniform(0.1, 0.4, size=shape + (2,))
    return np.concatenate([c, s], axis=-1)


def _smooth_giou_pair(p: np.ndarray, g: np.ndarray, margin: float = 1e-3) -> bool:
    """No edge of ``p`` within ``margin`` of any edge of ``g`` (GIoU is smooth there)."""
    pe, ge = np.stack(L.cxcywh_to_xyxy(p), -1), np.stack(L.cxcywh_to_xyxy(g), -1)
    for a, b in ((0, 2), (1, 3)):
        for i in (a, b):
            for j in (a, b):
                if np.any(np.abs(pe[..., i] - ge[..., j]) < margin):
                    return False
    return True


def _giou_boxes(r, n):
    while True:
        p, g = random_boxes(r, (n,)), random_boxes(r, (n,))
        if _smooth_giou_pair(p, g):
            return p, g


def _toy_prediction(r, t=3, n=4, h=5, w=5):
    logits = _leaf(r.normal(size=(t, n, 1)))
    raw_boxes = _leaf(r.normal(scale=0.5, size=(t, n, 4)))
    masks = _leaf(r.normal(size=(t, n, h, w)))
    flags = np.ones(t)
    flags[r.integers(t)] = float(r.random() < 0.5)
    gt = L.GroundTruthTrajectory(flags, random_boxes(r, (t,)), (r.random((t, h, w)) < 0.4).astype(np.float64))
    return logits, raw_boxes, masks, gt


def _loss_cases() -> dict[str, Callable]:
    def dice(r):
        x = _leaf(r.normal(size=(3, 6, 6)))
        g = (r.random((3, 6, 6)) < 0.4).astype(float)
        return [x], lambda: L.dice_loss(x, g)

    def focal(r):
        x = _leaf(2 * r.normal(size=(3, 6, 6)))
        g = (r.random((3, 6, 6)) < 0.4).astype(float)
        return [x], lambda: L.focal_loss(x, g)

    def l1(r):
        p = _leaf(random_boxes(r, (4,)))
        g = random_boxes(r, (4,))
        return [p], lambda: L.box_losses(p, g)[0]

    def giou(r):
        p, g = _giou_boxes(r, 4)
        p = _leaf(p)
        return [p], lambda: L.box_losses(p, g)[1]

    def cls(r):
        x = _leaf(2 * r.normal(size=(4, 5, 1)))
        flags = (r.random(4) < 0.7).astype(float)
        flags[0] = 1.0
        sigma = int(r.integers(5))
        return [x], lambda: L.class_loss(x, sigma, flags)

    def contrastive(r):
        vq, ft = _leaf(r.normal(size=(6, 8))), _leaf(r.normal(size=(4, 8)))
        y = np.eye(6)[r.integers(6)]
        return [vq, ft], lambda: L.contrastive_loss(vq, ft, y)

    def total(r):
        logits, raw, masks, gt = _toy_prediction(r)
        vq, ft = _leaf(r.normal(size=(4, 6))), _leaf(r.normal(size=(3, 6)))
        w = L.LossWeights()

        def pred():
            return TrajectoryPrediction(logits, T.sigmoid(raw), masks)

        with T.no_grad():
            match = L.match_trajectory(pred(), gt, w)
        return [logits, raw, masks, vq, ft], lambda: L.total_loss(pred(), gt, match, vq, ft, w).total

    return {"dice": dice, "focal": focal, "l1": l1, "giou": giou, "class_focal": cls,
            "contrastive": contrastive, "total": total}


def gradcheck_losses(instances: int = 20, seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for name, build in _loss_cases().items():
        if names is not None and name not in names:
            continue
        worst = 0.0
        for i in range(instances):
            r = np.random.default_rng([seed, i, 7, len(name)])
            inputs, fn = build(r)
            worst = max(worst, joint_gradcheck(fn, inputs))
        results.append(CheckResult("gradcheck-loss", name, worst < GRAD_TOL, worst, f"{instances} instances"))
    return results


TOY_OVERRIDES = dict(num_frames=2, num_queries=4, d_model=8, text_dim=8, heads=2, height=16, width=16,
                     num_encoder_layers=1, num_decoder_layers=1, num_voc_layers=1, text_layers=1)


def gradcheck_pipeline(seed: int = 0, coords_per_param: int = 2, max_params: int | None = None,
                       **overrides) -> CheckResult:
    """Finite differences through the whole model and loss at toy dims."""
    cfg = Config(seed=seed, **{**TOY_OVERRIDES, **overrides}).validate()
    r = np.random.default_rng(seed + 101)
    model = SOCModel(cfg, 12)
    frames = r.random((cfg.num_frames, 3, cfg.height, cfg.width))
    tokens = [2, 5, 7, 3]
    h4, w4 = cfg.height // 4, cfg.width // 4
    gt_masks = np.zeros((cfg.num_frames, h4, w4))
    gt_masks[:, 1:3, 1:3] = 1.0
    gt = L.GroundTruthTrajectory(np.ones(cfg.num_frames), np.tile([0.37, 0.62, 0.3, 0.25], (cfg.num_frames, 1)), gt_masks)
    w = cfg.loss_weights
    with T.no_grad():
        match = L.match_trajectory(model(frames, tokens).pred, gt, w)

    def fn():
        out = model(frames, tokens)
        return L.total_loss(out.pred, gt, match, out.video_queries, out.fused_text_final, w).total

    params = [p for _, p in model.named_parameters()]
    if max_params is not None:
        params = [params[i] for i in sorted(r.choice(len(params), size=max_params, replace=False))]
    coords = {k: sorted(r.choice(p.size, size=min(coords_per_param, p.size), replace=False).tolist())
              for k, p in enumerate(params)}
    err, skipped = joint_gradcheck(fn, params, coords=coords, skip_kinks=True)
    n = sum(len(c) for c in coords.values())
    ok = err < GRAD_TOL and skipped <= 0.05 * n
    return CheckResult("gradcheck-pipeline", "end_to_end", ok, err,
                       f"{n} coordinates over {len(params)} parameter tensors, {skipped} skipped at kinks")


# ----------------------------------------------------------------- assignment oracle

def brute_force_assignment(cost: np.ndarray) -> float:
    n, m = cost.shape
    best = math.inf
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = min(best, assignment_cost(cost, list(zip(range(n), perm))))
    else:
        for perm in itertools.permutations(range(n), m):
            best = min(best, assignment_cost(cost, list(zip(perm, range(m)))))
    return best


def hungarian_oracle(n_matrices: int = 1000, max_n: int = 7, seed: int = 0) -> CheckResult:
    r = np.random.default_rng(seed)
    mismatches = 0
    for i in range(n_matrices):
        n, m = (int(v) for v in r.integers(1, max_n + 1, size=2))
        cost = r.integers(0, 10, size=(n, m)).astype(float) if i % 2 else r.normal(size=(n, m))
        got = assignment_cost(cost, hungarian(cost))
        if got != brute_force_assignment(cost):
            mismatches += 1
    return CheckResult("hungarian", "brute_force", mismatches == 0, float(mismatches),
                       f"{n_matrices} matrices up to {max_n}x{max_n}")


# ----------------------------------------------------------------- metric oracles

def brute_iou(p, g) -> float:
    inter = union = 0
    for a, b in zip(np.ravel(p), np.ravel(g)):
        inter += int(a and b)
        union += int(a or b)
    return 1.0 if union == 0 else inter / union


def brute_boundary(mask) -> list[tuple[int, int]]:
    h, w = mask.shape
    out = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                    out.append((y, x))
                    break
    return out


def _hit_fraction(src, dst, tol) -> float:
    hits = 0
    for y, x in src:
        if any(math.sqrt((y - v) ** 2 + (x - u) ** 2) <= tol for v, u in dst):
            hits += 1
    return hits / len(src)


def brute_boundary_f(p, g, tol) -> float:
    bp, bg = brute_boundary(np.asarray(p, bool)), brute_boundary(np.asarray(g, bool))
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0
    prec, rec = _hit_fraction(bp, bg, tol), _hit_fraction(bg, bp, tol)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def brute_precision(ious, k) -> float:
    return sum(1 for v in ious if v > k) / len(ious)


def brute_map(ious) -> float:
    ks = [0.5 + 0.05 * i for i in range(10)]
    return sum(brute_precision(ious, round(k, 2)) for k in ks) / 10


def brute_variance(xs) -> float:
    mu = sum(xs) / len(xs)
    return sum((x - mu) ** 2 for x in xs) / len(xs)


def random_mask(r, size: int = 32) -> np.ndarray:
    """Union of a few random discs and rectangles, sometimes empty or noisy."""
    kind = r.integers(10)
    if kind == 0:
        return np.zeros((size, size), dtype=np.uint8)
    if kind == 1:
        return (r.random((size, size)) < 0.3).astype(np.uint8)
    ys, xs = np.mgrid[0:size, 0:size]
    m = np.zeros((size, size), bool)
    for _ in range(r.integers(1, 4)):
        cy, cx, rad = r.uniform(0, size), r.uniform(0, size), r.uniform(2, size / 3)
        if r.random() < 0.5:
            m |= (ys - cy) ** 2 + (xs - cx) ** 2 <= rad * rad
        else:
            m |= (np.abs(ys - cy) <= rad) & (np.abs(xs - cx) <= rad * 0.7)
    return m.astype(np.uint8)


def metric_oracles(n_pairs: int = 100, size: int = 32, seed: int = 0) -> list[CheckResult]:
    r = np.random.default_rng(seed)
    pairs = [(random_mask(r, size), random_mask(r, size)) for _ in range(n_pairs)]
    # near-miss pairs exercise the boundary tolerance
    for k in range(0, n_pairs, 4):
        g = pairs[k][1]
        pairs[k] = (np.roll(g, (int(r.integers(-2, 3)), int(r.integers(-2, 3))), axis=(0, 1)), g)
    tol = M.default_tolerance(size, size)
    errs = {"iou": 0.0, "boundary_f": 0.0, "boundary_f_tol2": 0.0}
    for p, g in pairs:
        errs["iou"] = max(errs["iou"], abs(M.iou(p, g) - brute_iou(p, g)))
        errs["boundary_f"] = max(errs["boundary_f"], abs(M.boundary_f(p, g, tol) - brute_boundary_f(p, g, tol)))
        errs["boundary_f_tol2"] = max(errs["boundary_f_tol2"], abs(M.boundary_f(p, g, 2) - brute_boundary_f(p, g, 2)))
    ious = [brute_iou(p, g) for p, g in pairs]
    errs["precision_at_k"] = max(abs(M.precision_at_k(ious, k) - brute_precision(ious, k))
                                 for k in M.PRECISION_THRESHOLDS)
    errs["map_50_95"] = abs(M.map_50_95(ious) - brute_map(ious))
    seqs = [r.random(int(r.integers(1, 12))) for _ in range(n_pairs)]
    errs["stability_variance"] = max(abs(M.stability_variance(s) - brute_variance(list(s))) for s in seqs)
    results = [CheckResult("metrics", name, e <= METRIC_TOL, e, f"{n_pairs} random {size}x{size} cases")
               for name, e in errs.items()]

    one, zero = np.ones((4, 4)), np.zeros((4, 4))
    disjoint_a, disjoint_b = np.zeros((4, 4)), np.zeros((4, 4))
    disjoint_a[:2], disjoint_b[2:] = 1, 1
    edge = {
        "iou_both_empty": M.iou(zero, zero) == 1.0,
        "f_both_empty": M.boundary_f(zero, zero) == 1.0,
        "iou_disjoint": M.iou(disjoint_a, disjoint_b) == 0.0,
        "iou_identical": M.iou(one, one) == 1.0,
        "map_072": M.map_50_95([0.72]) == 0.5,
        "p50_split": M.precision_at_k([0.55, 0.45], 0.5) == 0.5,
    }
    results += [CheckResult("metrics-edge", k, ok, 0.0 if ok else 1.0) for k, ok in edge.items()]
    return results


def run_all(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    out = gradcheck_ops(instances, seed) + gradcheck_modules(instances, seed) + gradcheck_losses(instances, seed)
    out.append(gradcheck_pipeline(seed))
    out.append(hungarian_oracle(seed=seed))
    out += metric_oracles(seed=seed)
    return out
