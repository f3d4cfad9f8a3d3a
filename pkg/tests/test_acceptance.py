"""Acceptance criteria, one test per criterion (run with ``pytest -v``)."""

import itertools
import math
import time

import numpy as np
import pytest

from ainnoseg import io
from ainnoseg import model as M
from ainnoseg.augment import AugmentConfig, Sample, build_augmented_dataset, mosaic4, mosaic_center, quadrant_boxes
from ainnoseg.cli import main
from ainnoseg.gradcheck import MODEL_TOL, OP_TOL, run_suite
from ainnoseg.inference import InferenceConfig, infer_single, multiscale_infer, to_input
from ainnoseg.loss import LossWeights, composite_loss, pixel_cross_entropy
from ainnoseg.metrics import ConfusionMatrix, evaluate, final_score, miou, pixel_accuracy
from ainnoseg.model import ForwardOutputs, ModelConfig, SegModel
from ainnoseg.selftrain import SelfTrainConfig, run_rounds, score_model
from ainnoseg.synth import generate
from ainnoseg.tensor import Tensor, no_grad
from ainnoseg.train import TrainConfig, train
from oracles import bilinear_value, binary_maps_2x2, brute_scores, nearest_source

DESK_GRID = InferenceConfig(base_scales=(32,), multiples=(0.5, 1.0, 2.0))


def test_c1_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    ops = [r for r in results if r.tol == OP_TOL]
    spots = [r for r in results if r.name.startswith("model[")]
    assert len(ops) >= 20 and len(spots) == 8
    assert all(r.tol <= MODEL_TOL for r in results)
    failed = [(r.name, r.error) for r in results if not r.passed]
    assert not failed, failed
    assert elapsed < 60.0


def test_c2_attention_contracts(rng):
    cfg = ModelConfig(num_classes=5, input_size=(32, 32))
    p = M.init_params(cfg, seed=21)
    with no_grad():
        x = M.hrnet_lite_forward(Tensor(rng.normal(size=(2, 3, 32, 32))), cfg, p)
        pam, s = M.position_attention(x, p, return_attention=True)
        cam, c = M.channel_attention(x, p, return_attention=True)
        aux = M.ocr_aux_head(x, p)
        _, maps = M.ocr_context(x, aux, cfg.ocr_regions, p, return_maps=True)
    assert np.array_equal(pam.data, x.data) and np.array_equal(cam.data, x.data)
    for stochastic in (s.data, c.data, maps["regions"].data, maps["pixel_region"].data):
        assert stochastic.min() >= 0 and np.abs(stochastic.sum(-1) - 1).max() < 1e-9


def test_c3_metrics_oracle(rng):
    maps = binary_maps_2x2()
    # every two-image dataset of 2x2 binary (gt, pred) pairs: 2^16 cases
    for code in range(1 << 16):
        g1, p1, g2, p2 = (maps[(code >> s) & 15] for s in (0, 4, 8, 12))
        cm = ConfusionMatrix(2).update(p1, g1).update(p2, g2)
        acc, m = brute_scores([(p1, g1), (p2, g2)], 2)
        assert abs(pixel_accuracy(cm)[0] - acc) <= 1e-12 and abs(miou(cm)[0] - m) <= 1e-12
    for _ in range(100):
        gt, pred = rng.integers(0, 5, (8, 8)).astype(np.uint8), rng.integers(0, 5, (8, 8)).astype(np.uint8)
        gt[rng.random((8, 8)) < 0.1] = 255
        cm = ConfusionMatrix(5).update(pred, gt)
        acc, m = brute_scores([(pred, gt)], 5)
        assert abs(pixel_accuracy(cm)[0] - acc) <= 1e-12 and abs(miou(cm)[0] - m) <= 1e-12
    assert abs(final_score(0.8, 0.6) - 0.7) <= 1e-12


def test_c4_composite_loss_behaviour(rng):
    labels = rng.integers(0, 4, (6, 6))
    heads = [Tensor(rng.normal(size=(4, 6, 6))) for _ in range(3)]
    total, _ = composite_loss(ForwardOutputs(*heads), labels, LossWeights(0.0, 0.0, 1.0))
    assert total.item() == pixel_cross_entropy(heads[2], labels).item()
    w = LossWeights()
    for c in (2, 4, 8):
        flat = Tensor(np.zeros((c, 6, 6)))
        total, _ = composite_loss(ForwardOutputs(flat, flat, flat), rng.integers(0, c, (6, 6)), w)
        assert abs(total.item() - (w.alpha + w.beta + w.gamma) * math.log(c)) < 1e-9


def test_c5_mosaic_correctness(rng):
    srcs = []
    for i in range(4):
        labels = (np.arange(256).reshape(16, 16) + 64 * i).astype(np.uint8)  # each label names its pixel
        srcs.append(Sample(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), labels, f"s{i}"))
    for seed, out in itertools.product(range(8), ((16, 16), (24, 20))):
        m = mosaic4(srcs, out, seed)
        boxes = quadrant_boxes(out, mosaic_center(out, np.random.default_rng(seed)))
        for s, (y0, y1, x0, x1) in zip(srcs, boxes):
            qh, qw = y1 - y0, x1 - x0
            for y, x in itertools.product(range(qh), range(qw)):
                sy, sx = nearest_source(y, 16, qh), nearest_source(x, 16, qw)
                assert m.labels[y0 + y, x0 + x] == s.labels[sy, sx]
                for ch in range(3):
                    assert abs(int(m.image[y0 + y, x0 + x, ch]) - bilinear_value(s.image, y, x, ch, qh, qw)) <= 0.5 + 1e-9
    tiny = [Sample(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8), str(i)) for i in range(20000)]
    out = build_augmented_dataset(tiny, AugmentConfig(out_size=(8, 8), mosaic_ratio=0.3))
    assert len(out) - len(tiny) == 6000


def test_c6_overfit_sanity():
    t0 = time.perf_counter()
    cfg = ModelConfig(num_classes=5, input_size=(32, 32))
    data = generate(8, 7, size=32)
    result = train(cfg, data, TrainConfig(steps=1000, lr=0.1, batch_size=8, grad_clip=1.0, log_every=0))
    cm = ConfusionMatrix(5)
    for s in data:
        cm.update(np.argmax(infer_single(result.model, s.image, 32), axis=0), s.labels)
    train_miou = miou(cm)[0]
    score = score_model(result.model, data, DESK_GRID)["score"]
    elapsed = time.perf_counter() - t0
    assert train_miou == 1.0, train_miou
    assert score > 0.95, score
    assert elapsed < 600.0


def test_c7_self_training_loop(tmp_path):
    labeled, unlabeled = generate(8, 11, size=32), generate(32, 12, size=32, prefix="u")
    held = generate(8, 13, size=32, prefix="h")
    cfg = ModelConfig(num_classes=5, input_size=(32, 32))
    tc = TrainConfig(steps=300, lr=0.1, batch_size=8, log_every=0)
    st = SelfTrainConfig(seed=3)

    def run(path, max_steps=None):
        return run_rounds(labeled, unlabeled, 2, path, cfg, tc, DESK_GRID, st, held_out=held, max_steps=max_steps)

    full = run(tmp_path / "full")
    assert [r for r, _ in full.round_scores] == [1, 2]
    assert full.round_scores[0][1] >= full.teacher_score - 0.02, (full.teacher_score, full.round_scores)
    for max_steps in (2, 3):  # interrupt twice, then finish
        run(tmp_path / "resumed", max_steps)
    resumed = run(tmp_path / "resumed")
    assert resumed == full
    a, b = tmp_path / "full", tmp_path / "resumed"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_c8_fusion_invariance(trained, synth8):
    image = synth8[5].image
    _, single = multiscale_infer(trained, image, InferenceConfig((32,), (1.0,)))
    assert np.array_equal(single, infer_single(trained, image, 32))
    bases, mults = (32, 48, 16), (0.5, 1.0, 1.5, 2.0)
    ref = multiscale_infer(trained, image, InferenceConfig(bases, mults))
    for pb, pm in itertools.islice(zip(itertools.permutations(bases), itertools.permutations(mults)), 1, 6):
        got = multiscale_infer(trained, image, InferenceConfig(pb, pm))
        assert np.array_equal(got[0], ref[0]) and np.array_equal(got[1], ref[1])


def _pipeline(root, cfg_path):
    d = str(root / "data")
    steps = [
        ["synth", "--out", d, "--n", "8", "--seed", "5", "--size", "32"],
        ["synth", "--out", str(root / "unl"), "--n", "8", "--seed", "6", "--size", "32", "--unlabeled"],
        ["augment", "--config", cfg_path, "--data", d, "--out", str(root / "aug")],
        ["train", "--config", cfg_path, "--data", str(root / "aug"), "--out", str(root / "model" / "m.aseg")],
        ["selftrain", "--config", cfg_path, "--data", d, "--unlabeled", str(root / "unl"),
         "--run-dir", str(root / "st")],
        ["infer", "--config", cfg_path, "--checkpoint", str(root / "st" / "finetune1.aseg"), "--input", d,
         "--out", str(root / "pred"), "--probs"],
        ["eval", "--config", cfg_path, "--pred", str(root / "pred"), "--gt", d, "--out", str(root / "report")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv


def test_c9_pipeline_determinism(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("model: {input_size: [32, 32]}\n"
                   "train: {steps: 40, batch_size: 8, augment: true}\n"
                   "augment: {out_size: [32, 32], base_scales: [32], crop_size: [32, 32], seed: 9}\n"
                   "inference: {base_scales: [32], multiples: [0.5, 1.0, 2.0]}\n"
                   "selftrain: {rounds: 1, seed: 4}\n")
    for run in ("a", "b"):
        _pipeline(tmp_path / run, str(cfg))
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    kinds = {f.suffix for f in files}
    assert {".aseg", ".pgm", ".tsv", ".png", ".json", ".csv"} <= kinds
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    assert not differing, differing
