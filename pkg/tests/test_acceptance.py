"""Acceptance criteria, one test per criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -s``. The SSL and layered-task
fixtures train real (desk-scale) models; expect tens of minutes on one CPU
core. Criteria and tolerances are pinned here, nothing is calibrated at
run time.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from batlab.encoder.model import (
    EncoderConfig,
    attention_sink_stat,
    collect_stack,
    encoder_block,
    forward_full,
    init_encoder_weights,
    wrap_weights,
)
from batlab.harness.checkpoint import load_checkpoint, save_checkpoint
from batlab.harness.config import config_from_dict
from batlab.harness.ingest import cache_root, ingest_manifest
from batlab.harness.runs import (
    build_trainer,
    featurized_corpus,
    load_manifest,
    pretrain_sidecar,
    run_pretrain,
    run_probe,
)
from batlab.harness.stacks import embed_manifest
from batlab.harness.synth import synth_dataset
from batlab.metrics import accuracy, average_precision, f1, mean_average_precision, spearman_rank
from batlab.numerics import Tape, grad_check, ops
from batlab.numerics.tensor import constant
from batlab.pretrain.decoder import DecoderConfig, decoder_forward, init_decoder_weights
from batlab.pretrain.teacher import make_targets
from batlab.pretrain.trainer import LossReport, PretrainConfig
from batlab.probe.cgp import CGPModel, ProbeState, cgp_forward, gate_report, init_probe_state, normalize_stack
from batlab.probe.training import (
    ProbeDataset,
    _StackData,
    _evaluate,
    extract_linear_features,
    layerwise_linear_probe,
    linear_probe,
    train_probe,
)
from batlab.probe.cgp import ProbeConfig


def report(num, ok, detail):
    print(f"\n[criterion {num:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def _random_weights_like(base, rng):
    out = {}
    for k, v in base.items():
        if k.endswith(".g"):
            out[k] = rng.normal(1.0, 0.2, size=v.shape)
        elif v.ndim == 2:
            out[k] = rng.normal(0.0, v.shape[0] ** -0.5, size=v.shape)
        else:
            out[k] = rng.normal(0.0, 0.1, size=v.shape)
    return out


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------

SSL_CONFIG = {
    "seed": 2026,
    "synth": {"n_clips": 512, "n_classes": 4, "duration_min": 1.0, "duration_max": 1.0,
              "event_prob": 0.35, "min_positives_per_split": 10},
    "encoder": {"depth": 4, "width": 64, "heads": 4, "mlp_ratio": 4.0, "gated": True},
    "decoder": {"kind": "vit", "depth": 2, "heads": 4, "mlp_ratio": 4.0},
    "pretrain": {"steps": 2000, "batch_size": 8, "views": 4, "keep_ratio": 0.2,
                 "warmup_steps": 250, "peak_lr": 5e-4, "log_every": 1, "diag_every": 50},
}


@pytest.fixture(scope="session")
def ssl_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("ssl_corpus")
    config = config_from_dict(SSL_CONFIG)
    synth_dataset(config.synth, config.frontend, config.seed, root)
    manifest, mdir = load_manifest(root / "manifest.json")
    corpus = featurized_corpus(manifest, mdir, config, root)
    return {"root": root, "config": config, "manifest": manifest, "corpus": corpus}


def _train_ssl(ssl_corpus, gated: bool):
    doc = json.loads(json.dumps(SSL_CONFIG))
    doc["encoder"]["gated"] = gated
    config = config_from_dict(doc)
    trainer = build_trainer(config, config.seed, ssl_corpus["corpus"])
    trainer.run()
    batch = ssl_corpus["corpus"]["data"][:32]
    _, traces = forward_full(batch, trainer.enc_cfg, wrap_weights(trainer.enc_weights),
                             retain_attn=True)
    sink = attention_sink_stat([tr.attn for tr in traces])
    return {"trainer": trainer, "config": config, "sink": sink}


@pytest.fixture(scope="session")
def ssl_gated(ssl_corpus):
    return _train_ssl(ssl_corpus, gated=True)


@pytest.fixture(scope="session")
def ssl_gated_rerun(ssl_corpus):
    return _train_ssl(ssl_corpus, gated=True)


@pytest.fixture(scope="session")
def ssl_ungated(ssl_corpus):
    return _train_ssl(ssl_corpus, gated=False)


@pytest.fixture(scope="session")
def ssl_stacks(ssl_corpus, ssl_gated):
    """Frozen EOB stacks of the trained gated encoder, split for probing."""
    trainer = ssl_gated["trainer"]
    data = ssl_corpus["corpus"]["data"]
    stacks = []
    handles = wrap_weights(trainer.enc_weights)
    for start in range(0, len(data), 64):
        _, traces = forward_full(data[start : start + 64], trainer.enc_cfg, handles)
        stack = collect_stack(traces, tap="eob")
        stacks.extend(stack.sample(j) for j in range(stack.patch.shape[1]))
    records = ssl_corpus["manifest"]["records"]
    n_classes = len(ssl_corpus["manifest"]["classes"])
    labels = np.zeros((len(records), n_classes))
    for i, rec in enumerate(records):
        labels[i, rec["labels"]] = 1.0

    def subset(split):
        idx = [i for i, r in enumerate(records) if r["split"] == split]
        return ProbeDataset([stacks[i] for i in idx], labels[idx], n_classes, "multi-label")

    return {"train": subset("train"), "valid": subset("valid"), "test": subset("test")}


LAYERED_SEED = 21


@pytest.fixture(scope="session")
def layered_results(tmp_path_factory):
    """Full layered-task pipeline: synth -> embed -> probes."""
    root = tmp_path_factory.mktemp("layered")
    config = config_from_dict({
        "seed": LAYERED_SEED,
        "synth": {"n_clips": 320, "n_classes": 4, "layered": True,
                  "min_positives_per_split": 8},
        "probe": {"kind": "cgp", "n_prototypes": 128, "steps": 1500, "batch_size": 32,
                  "loss": "ce", "warmup_steps": 100, "eval_every": 200},
    })
    manifest = synth_dataset(config.synth, config.frontend, config.seed, root)
    result = ingest_manifest(manifest, root, config.frontend, cache_root(root))
    assert not result["errors"]
    checkpoint = root / manifest["layered"]["encoder_checkpoint"]
    index = embed_manifest(manifest, result["prefixes"], checkpoint, root / "emb")

    from batlab.harness.stacks import load_stack_dataset

    train_set, _ = load_stack_dataset(root / "emb" / "stacks_index.json", split="train")
    valid_set, _ = load_stack_dataset(root / "emb" / "stacks_index.json", split="valid")
    test_set, _ = load_stack_dataset(root / "emb" / "stacks_index.json", split="test")

    lin_cfg = ProbeConfig(kind="linear", steps=1500, batch_size=32, loss="ce", warmup_steps=50)
    curve = layerwise_linear_probe(train_set, lin_cfg, seed=5, val=valid_set, eval_set=test_set)

    state, _ = train_probe(train_set, config.probe, np.random.default_rng(9), val=valid_set)
    gates = gate_report(state)
    model = CGPModel(state)
    cgp_acc = _evaluate(
        lambda z, o: model.forward({k: constant(v) for k, v in model.params.items()}, z, o),
        _StackData(test_set),
    )
    lin_model, _ = linear_probe(train_set, lin_cfg, np.random.default_rng(11), val=valid_set)
    final_layer = train_set.stacks[0].patch.shape[0] - 1
    feats = extract_linear_features(test_set.stacks, final_layer, "cls")
    lin_acc = accuracy(lin_model.scores(feats), test_set.labels)
    return {
        "designated": manifest["layered"]["designated_layer"],
        "curve": curve,
        "alpha": gates["alpha"],
        "gate_argmax": gates["argmax_layer"],
        "cgp_acc": cgp_acc,
        "linear_final_acc": lin_acc,
        "spearman": spearman_rank(gates["alpha"], curve),
    }


# ---------------------------------------------------------------------------
# criterion 1: gradient fidelity
# ---------------------------------------------------------------------------


def test_criterion_01_gradient_fidelity():
    t0 = time.time()
    worst = {"block": 0.0, "decoder-vit": 0.0, "decoder-cnn": 0.0, "cgp": 0.0}

    cfg = EncoderConfig(depth=1, width=16, heads=2, mlp_ratio=2.0, gated=True,
                        patch_dim=4, grid=(2, 4))
    for seed in range(20):
        rng = np.random.default_rng(10_000 + seed)
        params = {k: v for k, v in _random_weights_like(
            init_encoder_weights(cfg, rng), rng).items() if k.startswith("b0.")}
        x = rng.normal(size=(2, 8, 16))
        proj = rng.normal(size=(2, 8, 16))

        def f(tape, h):
            tr = encoder_block(constant(x), h, cfg, prefix="b0.")
            return ops.sum_along(ops.mul(tr.z_d, constant(proj)))

        worst["block"] = max(worst["block"], grad_check(f, params, eps=1e-5).max_rel_err)

    for kind in ("vit", "cnn"):
        dcfg = DecoderConfig(kind=kind, depth=2, heads=2, mlp_ratio=1.0)
        for seed in range(20):
            rng = np.random.default_rng(20_000 + seed)
            params = _random_weights_like(init_decoder_weights(dcfg, 8, (2, 3), rng), rng)
            vis = rng.normal(size=(1, 3, 8))
            idx = np.sort(rng.permutation(6)[:3])
            proj = rng.normal(size=(1, 6, 8))

            def f(tape, h):
                out = decoder_forward(constant(vis), idx, dcfg, 8, (2, 3), h)
                return ops.sum_along(ops.mul(out, constant(proj)))

            # eps 3e-5: attention-query gradients can be tiny, and central
            # differences at smaller eps become roundoff-limited on them
            worst[f"decoder-{kind}"] = max(worst[f"decoder-{kind}"],
                                           grad_check(f, params, eps=3e-5).max_rel_err)

    for seed in range(20):
        rng = np.random.default_rng(30_000 + seed)
        n_layers, n_tok, n_proto, dim, n_cls = 3, 4, 5, 8, 2
        z_hat = rng.normal(size=(n_layers, n_tok, dim))
        z_hat /= np.linalg.norm(z_hat, axis=-1, keepdims=True)
        o_hat = rng.normal(size=(n_layers, dim))
        o_hat /= np.linalg.norm(o_hat, axis=-1, keepdims=True)
        params = {
            "prototypes": rng.normal(size=(n_proto, dim)),
            "gate": rng.normal(size=n_layers),
            "w": rng.normal(size=(n_cls, 3 * n_proto)),
            "b": rng.normal(size=n_cls),
        }
        proj = rng.normal(size=n_cls)

        def f(tape, h):
            model = CGPModel(ProbeState(params["prototypes"], params["gate"],
                                        params["w"], params["b"]))
            logits = model.forward(h, constant(z_hat[:, None]), constant(o_hat[:, None]))
            return ops.sum_along(ops.mul(ops.reshape(logits, (n_cls,)), constant(proj)))

        worst["cgp"] = max(worst["cgp"], grad_check(f, params, eps=1e-5).max_rel_err)

    elapsed = time.time() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 300
    report(1, ok, "max rel err " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
           + f"; {elapsed:.0f}s (20 seeds each)")


# ---------------------------------------------------------------------------
# criterion 2: CGP structural contracts
# ---------------------------------------------------------------------------


def test_criterion_02_cgp_structural():
    from batlab.encoder.model import LayerStack
    from batlab.numerics import using_dtype

    rng = np.random.default_rng(0)
    widths_ok = True
    for k_protos in (1, 7, 113):
        state = init_probe_state(3, 8, k_protos, 2, rng)
        widths_ok &= state.w.shape == (2, 3 * k_protos)
        stack = LayerStack(patch=rng.normal(size=(3, 5, 8)), cls=rng.normal(size=(3, 8)))
        cgp_forward(stack, state)  # exercises the 3K pipeline end to end

    alpha_ok = True
    scale_drift = 0.0
    shift_drift = 0.0
    with using_dtype("float64"):  # the 1e-9 drift bound is below f32 resolution
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            stack = LayerStack(patch=rng.normal(size=(4, 6, 8)), cls=rng.normal(size=(4, 8)))
            state = init_probe_state(4, 8, 6, 3, rng)
            state.gate[:] = rng.normal(size=4) * 3
            state.w[:] = rng.normal(size=state.w.shape)
            state.b[:] = rng.normal(size=3)
            alpha = gate_report(state)["alpha"]
            alpha_ok &= abs(alpha.sum() - 1.0) <= 1e-10 and np.all(alpha > 0)

            base = cgp_forward(stack, state).data
            scaled = LayerStack(patch=stack.patch.copy(), cls=stack.cls.copy())
            factor = float(rng.uniform(0.2, 9.0))
            layer = int(rng.integers(0, 4))
            scaled.patch[layer] *= factor
            scaled.cls[layer] *= factor
            scale_drift = max(scale_drift, float(np.max(np.abs(
                cgp_forward(scaled, state).data - base))))

            shifted = ProbeState(state.prototypes, state.gate + 11.0, state.w, state.b)
            shift_drift = max(shift_drift, float(np.max(np.abs(
                cgp_forward(stack, shifted).data - base))))

    ok = widths_ok and alpha_ok and scale_drift <= 1e-6 and shift_drift <= 1e-9
    report(2, ok, f"3K widths ok={widths_ok}, alpha convex={alpha_ok}, "
                  f"scale drift {scale_drift:.2e} <= 1e-6, gate-shift drift {shift_drift:.2e} <= 1e-9")


# ---------------------------------------------------------------------------
# criterion 3: target-generation contracts
# ---------------------------------------------------------------------------


def test_criterion_03_target_contracts():
    from batlab.encoder.model import LayerStack

    rng = np.random.default_rng(3)
    worst_mean = worst_var = worst_o = 0.0
    for _ in range(20):
        n_layers = int(rng.integers(1, 5))
        n_tok = int(rng.integers(4, 40))
        dim = int(rng.integers(4, 32))
        stack = LayerStack(patch=rng.normal(size=(n_layers, n_tok, dim)) * 3 + 1,
                           cls=rng.normal(size=(n_layers, dim)))
        targets = make_targets(stack)
        worst_mean = max(worst_mean, float(np.max(np.abs(targets.z.mean(axis=-1)))))
        worst_var = max(worst_var, float(np.max(np.abs(targets.z.var(axis=-1) - 1.0))))
        worst_o = max(worst_o, float(np.max(np.abs(targets.o - targets.z.mean(axis=-2)))))

    # no gradient reaches the teacher: same registry and op sequence whether or
    # not the teacher weights move, and no teacher name ever registers
    cfg = EncoderConfig(depth=2, width=16, heads=2, mlp_ratio=2.0, gated=True,
                        patch_dim=16, grid=(2, 4))
    rng = np.random.default_rng(4)
    student = init_encoder_weights(cfg, rng)
    teacher = {k: v.copy() for k, v in student.items()}
    patches = rng.uniform(0, 1, size=(2, 8, 16))

    def run_once():
        _, traces = forward_full(patches, cfg, wrap_weights(teacher))
        targets = make_targets(traces)
        tape = Tape()
        handles = wrap_weights(student, tape, prefix="enc.")
        final, _ = forward_full(patches, cfg, handles, mask=np.array([0, 2, 5]))
        o_m = ops.reshape(ops.gather_tokens(final, np.array([0])), (2, 16))
        diff = ops.sub(o_m, targets.o.astype(o_m.data.dtype))
        tape.backward(ops.mean_along(ops.sum_along(ops.mul(diff, diff), axis=-1)))
        return tape.op_sequence(), set(tape.params)

    ops_a, params_a = run_once()
    for v in teacher.values():
        v += 0.1
    ops_b, params_b = run_once()
    no_grad_ok = ops_a == ops_b and params_a == params_b and all(
        k.startswith("enc.") for k in params_a)

    ok = worst_mean < 1e-6 and worst_var < 1e-4 and worst_o < 1e-12 and no_grad_ok
    report(3, ok, f"token mean {worst_mean:.2e} < 1e-6, |var-1| {worst_var:.2e} < 1e-4, "
                  f"o-vs-mean {worst_o:.2e} < 1e-12, teacher isolated={no_grad_ok}")


# ---------------------------------------------------------------------------
# criterion 4: metric oracle
# ---------------------------------------------------------------------------


def _brute_force_ap(scores, labels):
    labels = labels.astype(bool)
    thresholds = sorted(set(scores), reverse=True)
    ap = prev = 0.0
    for t in thresholds:
        picked = scores >= t
        tp = (picked & labels).sum()
        ap += (tp / labels.sum() - prev) * (tp / picked.sum())
        prev = tp / labels.sum()
    return ap


def test_criterion_04_metric_oracle():
    t0 = time.time()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        s = int(rng.integers(2, 33))
        scores = np.round(rng.normal(size=s), 1)
        labels = rng.integers(0, 2, size=s)
        if labels.sum() == 0:
            labels[int(rng.integers(0, s))] = 1
        worst = max(worst, abs(average_precision(scores, labels) - _brute_force_ap(scores, labels)))
    hand_ok = (
        f1(np.array([[0.9], [0.8], [0.7], [0.1], [0.2]]),
           np.array([[1], [1], [0], [1], [0]])) == pytest.approx(2.0 / 3.0, abs=1e-15)
        and f1(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
               np.array([[1, 0], [0, 1], [1, 1]]), averaging="micro") == 1.0
        and accuracy(np.eye(4), np.array([0, 1, 2, 0])) == 0.75
        and accuracy(np.ones((3, 5)), np.zeros(3, dtype=int)) == 1.0
    )
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and hand_ok and elapsed < 60
    report(4, ok, f"sweep-vs-brute-force max |diff| {worst:.2e} over 1000 instances; "
                  f"hand cases exact={hand_ok}; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 5: desk-scale SSL sanity
# ---------------------------------------------------------------------------


def test_criterion_05_ssl_sanity(ssl_gated, ssl_gated_rerun):
    hist = ssl_gated["trainer"].history
    local = {r["step"]: r["loss_local"] for r in hist}
    early = float(np.mean([local[s] for s in range(100, 201) if s in local]))
    late = float(np.mean([local[s] for s in range(1900, 2001) if s in local]))
    halved = late <= 0.5 * early

    flagged = [r["step"] for r in hist if "collapse" in r and r["step"] > 200
               and (r["collapse"]["student"]["flagged"] or r["collapse"]["teacher"]["flagged"])]

    trace_a = [r["loss"] for r in hist]
    trace_b = [r["loss"] for r in ssl_gated_rerun["trainer"].history]
    max_dev = float(np.max(np.abs(np.array(trace_a) - np.array(trace_b))))

    ok = halved and not flagged and max_dev <= 1e-9
    report(5, ok, f"local loss {early:.3f} -> {late:.3f} (ratio {late / early:.2f} <= 0.5), "
                  f"collapse flags after step 200: {flagged or 'none'}, "
                  f"rerun trace max dev {max_dev:.1e} <= 1e-9")


# ---------------------------------------------------------------------------
# criterion 6: layer-aware probing reproduction
# ---------------------------------------------------------------------------


def test_criterion_06_layer_probing(layered_results):
    r = layered_results
    curve_argmax = int(np.argmax(r["curve"]))
    gap_pp = 100.0 * (r["cgp_acc"] - r["linear_final_acc"])
    ok = (curve_argmax == r["designated"]
          and r["gate_argmax"] == r["designated"]
          and gap_pp >= 10.0
          and r["spearman"] > 0.0)
    curve_str = "[" + ", ".join(f"{c:.2f}" for c in r["curve"]) + "]"
    report(6, ok, f"designated layer {r['designated']}: curve argmax {curve_argmax}, "
                  f"gate argmax {r['gate_argmax']}, curve {curve_str}, "
                  f"CGP {r['cgp_acc']:.3f} vs final linear {r['linear_final_acc']:.3f} "
                  f"(+{gap_pp:.1f}pp >= 10), spearman {r['spearman']:.2f} > 0")


# ---------------------------------------------------------------------------
# criterion 7: prototype-count trend
# ---------------------------------------------------------------------------


def test_criterion_07_prototype_trend(ssl_stacks):
    metrics = {}
    for k_protos in (16, 64, 256):
        cfg = ProbeConfig(kind="cgp", n_prototypes=k_protos, steps=800, batch_size=32,
                          loss="bce", warmup_steps=50, eval_every=200)
        state, _ = train_probe(ssl_stacks["train"], cfg, np.random.default_rng(77),
                               val=ssl_stacks["valid"])
        model = CGPModel(state)
        scores_rows = _StackData(ssl_stacks["valid"])
        metrics[k_protos] = _evaluate(
            lambda z, o: model.forward({k: constant(v) for k, v in model.params.items()}, z, o),
            scores_rows,
        )
    m16, m64, m256 = metrics[16], metrics[64], metrics[256]
    no_regression = m256 >= m16 - 0.005
    diminishing = (m256 - m64) <= (m64 - m16) + 0.01
    ok = no_regression and diminishing
    report(7, ok, f"val mAP: K=16 {m16:.4f}, K=64 {m64:.4f}, K=256 {m256:.4f}; "
                  f"no-regression={no_regression}, diminishing-shape={diminishing}")


# ---------------------------------------------------------------------------
# criterion 8: gated-attention A/B sink diagnostic (soft)
# ---------------------------------------------------------------------------


def test_criterion_08_attention_sink_ab(ssl_gated, ssl_ungated, tmp_path):
    gated_sink = ssl_gated["sink"]
    ungated_sink = ssl_ungated["sink"]
    flagged = not (gated_sink < ungated_sink)
    out = tmp_path / "attention_sink_ab.json"
    out.write_text(json.dumps({
        "gated_sink": gated_sink,
        "ungated_sink": ungated_sink,
        "flagged_gated_not_lower": flagged,
    }, indent=1))
    # soft criterion: the report must exist; the direction is logged, not asserted
    report(8, out.exists(), f"sink stat gated={gated_sink:.4f} vs ungated={ungated_sink:.4f} "
                            f"({'flagged: gated not lower' if flagged else 'gated lower'}); "
                            f"report written")


# ---------------------------------------------------------------------------
# criterion 9: equal-loss-weighting guard
# ---------------------------------------------------------------------------


def test_criterion_09_equal_weight_guard(ssl_gated):
    hist = ssl_gated["trainer"].history
    exact = all(r["loss"] == r["loss_global"] + r["loss_local"] for r in hist)
    field_names = {f.name for f in dataclasses.fields(PretrainConfig)}
    no_knob = not any("weight" in name and "decay" not in name for name in field_names)
    derived = LossReport(loss_global=0.25, loss_local=1.5)
    total_enforced = derived.loss == 1.75
    ok = exact and no_knob and total_enforced and len(hist) >= 2000
    report(9, ok, f"loss == global + local bit-exact on {len(hist)} logged steps={exact}; "
                  f"no scale knob in config={no_knob}; report enforces the sum={total_enforced}")


# ---------------------------------------------------------------------------
# criterion 10: round-trip and end-to-end determinism
# ---------------------------------------------------------------------------


def _resume_equivalence(tmp_path) -> float:
    doc = {
        "seed": 55,
        "synth": {"n_clips": 32, "duration_min": 1.0, "duration_max": 1.0,
                  "event_prob": 0.5, "min_positives_per_split": 1},
        "encoder": {"depth": 2, "width": 32, "heads": 4, "mlp_ratio": 2.0, "gated": True},
        "decoder": {"kind": "vit", "depth": 2, "heads": 4, "mlp_ratio": 2.0},
        "pretrain": {"steps": 50, "batch_size": 4, "views": 2, "keep_ratio": 0.3,
                     "warmup_steps": 5, "log_every": 1, "diag_every": 0},
    }
    config = config_from_dict(doc)
    corpus_dir = tmp_path / "corpus"
    synth_dataset(config.synth, config.frontend, config.seed, corpus_dir)
    manifest, mdir = load_manifest(corpus_dir / "manifest.json")
    corpus = featurized_corpus(manifest, mdir, config, tmp_path / "w")

    full = build_trainer(config, config.seed, corpus)
    losses_full = [full.step().loss for _ in range(50)]

    half = build_trainer(config, config.seed, corpus)
    for _ in range(25):
        half.step()
    save_checkpoint(tmp_path / "ck", half.checkpoint_arrays(), pretrain_sidecar(half, config))
    arrays, sidecar = load_checkpoint(tmp_path / "ck")
    resumed = build_trainer(config, config.seed, corpus)
    resumed.restore(arrays, sidecar)
    losses_resumed = [resumed.step().loss for _ in range(25)]
    return float(np.max(np.abs(np.array(losses_resumed) - np.array(losses_full[25:]))))


def _pipeline_metrics(root, seed=77) -> dict:
    doc = {
        "seed": seed,
        "synth": {"n_clips": 128, "duration_min": 1.0, "duration_max": 1.0,
                  "event_prob": 0.4, "min_positives_per_split": 4},
        "encoder": {"depth": 2, "width": 32, "heads": 4, "mlp_ratio": 2.0, "gated": True},
        "decoder": {"kind": "vit", "depth": 2, "heads": 4, "mlp_ratio": 2.0},
        "pretrain": {"steps": 200, "batch_size": 6, "views": 2, "keep_ratio": 0.3,
                     "warmup_steps": 20, "log_every": 10, "diag_every": 50},
        "probe": {"kind": "cgp", "n_prototypes": 16, "steps": 200, "batch_size": 32,
                  "loss": "bce", "warmup_steps": 20, "eval_every": 50},
    }
    config = config_from_dict(doc)
    corpus_dir = root / "corpus"
    synth_dataset(config.synth, config.frontend, config.seed, corpus_dir)
    trainer = run_pretrain(config, config.seed, corpus_dir / "manifest.json", root / "pt")
    manifest, mdir = load_manifest(corpus_dir / "manifest.json")
    result = ingest_manifest(manifest, mdir, config.frontend, cache_root(root / "pt"),
                             target_frames=config.target_frames)
    embed_manifest(manifest, result["prefixes"], root / "pt" / "checkpoint_final", root / "emb")
    summary = run_probe(config, config.seed, root / "emb" / "stacks_index.json", root / "probe",
                        with_layer_curve=False)
    return {"final_loss": trainer.history[-1]["loss"],
            "val": summary["val_metric"], "test": summary["test_metric"]}


def test_criterion_10_roundtrip_and_determinism(tmp_path):
    resume_dev = _resume_equivalence(tmp_path / "resume")
    a = _pipeline_metrics(tmp_path / "runA")
    b = _pipeline_metrics(tmp_path / "runB")
    devs = {k: abs(a[k] - b[k]) for k in a}
    max_dev = max(devs.values())
    ok = resume_dev <= 1e-9 and max_dev <= 1e-9
    report(10, ok, f"resume loss-trace max dev {resume_dev:.1e} <= 1e-9; "
                   f"end-to-end metric devs {devs} (max {max_dev:.1e} <= 1e-9)")
