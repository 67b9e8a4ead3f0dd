"""Built-in verification suites: gradient checks and metric/mask oracles.

Runs without pytest so the CLI can gate deployments; prints one line per
suite and returns the number of failures.
"""

from __future__ import annotations

import tempfile
import warnings
from pathlib import Path

import numpy as np

from ..encoder.model import EncoderConfig, encoder_block, init_encoder_weights
from ..frontend.patches import patchify, unpatchify
from ..metrics import accuracy, average_precision, f1
from ..numerics import grad_check, ops
from ..numerics.tensor import constant
from ..pretrain.masking import inverse_block_mask, random_mask
from ..pretrain.teacher import make_targets
from ..probe.cgp import CGPModel, ProbeState, normalize_stack
from .container import read_container, write_container


def _suite_primitive_gradients() -> tuple:
    cases = {
        "matmul": lambda h: ops.matmul(h["x"], h["y"]),
        "layer_norm": lambda h: ops.layer_norm(h["x"], h["g"], h["b"], 1e-6),
        "softmax": lambda h: ops.softmax(h["x"], axis=-1),
        "gelu": lambda h: ops.gelu(h["x"]),
        "sigmoid": lambda h: ops.sigmoid(h["x"]),
        "l2_normalize": lambda h: ops.l2_normalize(h["x"], axis=-1),
        "max": lambda h: ops.max_along(h["x"], axis=-1),
        "bce": lambda h: ops.bce_with_logits(h["x"], np.eye(3, 4)),
    }
    failures = 0
    total = 0
    for name, op_fn in cases.items():
        for seed in range(5):
            rng = np.random.default_rng(500 + seed)
            params = {"x": rng.normal(size=(3, 4))}
            if name == "matmul":
                params["y"] = rng.normal(size=(4, 2))
            if name == "layer_norm":
                params["g"] = rng.normal(size=4)
                params["b"] = rng.normal(size=4)
            if name == "max":
                params["x"] = rng.permutation(12).reshape(3, 4) * 0.1

            def f(tape, h, op_fn=op_fn):
                out = op_fn(h)
                proj = np.random.default_rng(9).normal(size=out.shape)
                return ops.sum_along(ops.mul(out, constant(proj)))

            total += 1
            report = grad_check(f, params, eps=1e-6)
            if not report.max_rel_err < 1e-4:
                failures += 1
    return failures, total


def _suite_model_gradients() -> tuple:
    failures = 0
    total = 0
    cfg = EncoderConfig(depth=1, width=8, heads=2, mlp_ratio=2.0, gated=True,
                        patch_dim=4, grid=(1, 3))
    for seed in range(2):
        rng = np.random.default_rng(700 + seed)
        params = {}
        for k, v in init_encoder_weights(cfg, rng).items():
            if not k.startswith("b0."):
                continue
            if k.endswith(".g"):
                params[k] = rng.normal(1.0, 0.2, size=v.shape)
            elif v.ndim == 2:
                params[k] = rng.normal(0.0, v.shape[0] ** -0.5, size=v.shape)
            else:
                params[k] = rng.normal(0.0, 0.1, size=v.shape)
        x = rng.normal(size=(1, 3, cfg.width))
        proj = rng.normal(size=(1, 3, cfg.width))

        def f(tape, h):
            tr = encoder_block(constant(x), h, cfg, prefix="b0.")
            return ops.sum_along(ops.mul(tr.z_d, constant(proj)))

        total += 1
        if not grad_check(f, params, eps=1e-5).max_rel_err < 1e-4:
            failures += 1

    for seed in range(2):
        rng = np.random.default_rng(800 + seed)
        n_layers, n_tok, k_protos, dim, classes = 2, 3, 4, 6, 2
        z_hat = rng.normal(size=(n_layers, n_tok, dim))
        z_hat /= np.linalg.norm(z_hat, axis=-1, keepdims=True)
        o_hat = rng.normal(size=(n_layers, dim))
        o_hat /= np.linalg.norm(o_hat, axis=-1, keepdims=True)
        params = {
            "prototypes": rng.normal(size=(k_protos, dim)),
            "gate": rng.normal(size=n_layers),
            "w": rng.normal(size=(classes, 3 * k_protos)),
            "b": rng.normal(size=classes),
        }
        proj = rng.normal(size=classes)

        def f(tape, h):
            model = CGPModel(ProbeState(params["prototypes"], params["gate"],
                                        params["w"], params["b"]))
            logits = model.forward(h, constant(z_hat[:, None]), constant(o_hat[:, None]))
            return ops.sum_along(ops.mul(ops.reshape(logits, (classes,)), constant(proj)))

        total += 1
        if not grad_check(f, params, eps=1e-5).max_rel_err < 1e-4:
            failures += 1
    return failures, total


def _brute_force_ap(scores, labels):
    labels = labels.astype(bool)
    thresholds = sorted(set(scores), reverse=True)
    ap = prev_recall = 0.0
    for t in thresholds:
        picked = scores >= t
        tp = (picked & labels).sum()
        ap += (tp / labels.sum() - prev_recall) * (tp / picked.sum())
        prev_recall = tp / labels.sum()
    return ap


def _suite_metric_oracles() -> tuple:
    failures = 0
    total = 0
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = int(rng.integers(2, 33))
        scores = np.round(rng.normal(size=s), 1)
        labels = rng.integers(0, 2, size=s)
        if labels.sum() == 0:
            labels[0] = 1
        total += 1
        if abs(average_precision(scores, labels) - _brute_force_ap(scores, labels)) > 1e-9:
            failures += 1
    hand = [
        abs(f1(np.array([[0.9], [0.8], [0.7], [0.1], [0.2]]),
               np.array([[1], [1], [0], [1], [0]])) - 2.0 / 3.0) < 1e-12,
        accuracy(np.eye(4), np.array([0, 1, 2, 0])) == 0.75,
    ]
    total += len(hand)
    failures += sum(1 for ok in hand if not ok)
    return failures, total


def _suite_masking() -> tuple:
    failures = 0
    total = 0
    rng = np.random.default_rng(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(200):
            n = int(rng.integers(2, 64))
            plan = random_mask(n, float(rng.uniform(0.1, 0.9)), rng)
            total += 1
            if not np.array_equal(np.union1d(plan.masked, plan.visible), np.arange(n)):
                failures += 1
        for _ in range(50):
            grid = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
            plan = inverse_block_mask(grid, 0.25, rng=rng)
            kept = set(int(i) for i in plan.visible)
            start = next(iter(kept))
            seen, stack = {start}, [start]
            while stack:
                cur = stack.pop()
                r, c = divmod(cur, grid[1])
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    nxt = rr * grid[1] + cc
                    if 0 <= rr < grid[0] and 0 <= cc < grid[1] and nxt in kept and nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            total += 1
            if seen != kept:
                failures += 1
    return failures, total


def _suite_contracts() -> tuple:
    from ..encoder.model import LayerStack

    failures = 0
    total = 0
    rng = np.random.default_rng(2)
    stack = LayerStack(patch=rng.normal(size=(3, 16, 8)) * 3 + 1, cls=rng.normal(size=(3, 8)))
    targets = make_targets(stack)
    checks = [
        np.all(np.abs(targets.z.mean(axis=-1)) < 1e-6),
        np.all(np.abs(targets.z.var(axis=-1) - 1.0) < 1e-4),
        np.max(np.abs(targets.o - targets.z.mean(axis=-2))) < 1e-12,
    ]
    z_hat, o_hat = normalize_stack(stack)
    checks.append(np.max(np.abs(np.linalg.norm(z_hat, axis=-1) - 1.0)) < 1e-6)
    x = rng.normal(size=(35, 32))
    seq = patchify(x, k=16)
    checks.append(np.array_equal(unpatchify(seq), x))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.batl"
        arrays = {"a": rng.normal(size=(3, 4)).astype(np.float32)}
        write_container(path, arrays)
        back = read_container(path)
        checks.append(np.array_equal(back["a"], arrays["a"]))
    total += len(checks)
    failures += sum(1 for ok in checks if not ok)
    return failures, total


SUITES = {
    "primitive-gradients": _suite_primitive_gradients,
    "model-gradients": _suite_model_gradients,
    "metric-oracles": _suite_metric_oracles,
    "masking": _suite_masking,
    "contracts": _suite_contracts,
}


def run_selftest(print_fn=print) -> int:
    total_failures = 0
    for name, suite in SUITES.items():
        failures, total = suite()
        total_failures += failures
        status = "ok" if failures == 0 else "FAIL"
        print_fn(f"{name}: {total - failures}/{total} passed [{status}]")
    return total_failures
