"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL`` line (shown in the terminal
summary) before asserting.  The desk-scale training runs are shared through
module fixtures; expect the whole module to take about a quarter hour on one
CPU core.
"""

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from softdecode import metrics as M
from softdecode import tensor as T
from softdecode.datasets import write_desk_corpus
from softdecode.imageio import list_images, read_gray
from softdecode.jpeg import degrade, make_pair_corpus, read_manifest
from softdecode.pipeline import (
    QfMode, TrainConfig, TrainingResult, bench_decode, evaluate_corpus, evaluate_pairs, fused_ratio, train_branch,
)
from softdecode.plotting import smooth
from softdecode.sdnet import NetworkConfig, init_model, loss_and_gradients
from softdecode.transforms import dwt_pack, dwt_unpack, polyphase_pack, polyphase_unpack
from test_metrics import checkerboard, psnr_loop, random_pair, ssim_loop

BLIND = QfMode((10, 20, 30, 40), blind=True)
CLASSIC5_JPEG_QF10 = (27.82, 0.7595, 25.21)


@dataclass
class DeskRun:
    pixel: TrainingResult
    wavelet: TrainingResult
    seconds: float


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    train_dir, val_dir = write_desk_corpus(root / "images")
    return make_pair_corpus(train_dir, 10, root / "train10"), make_pair_corpus(val_dir, 10, root / "val10")


def _train_pair(corpus, out: Path, config: TrainConfig) -> DeskRun:
    train, val = corpus
    start = time.perf_counter()
    results = [train_branch(train, d, config, out / f"{d}.ckpt", val_manifest=val) for d in ("pixel", "wavelet")]
    return DeskRun(*results, time.perf_counter() - start)


@pytest.fixture(scope="module")
def dedicated(desk_corpus, tmp_path_factory):
    return _train_pair(desk_corpus, tmp_path_factory.mktemp("dedicated"), TrainConfig.preset("desk"))


@pytest.fixture(scope="module")
def blind(desk_corpus, tmp_path_factory):
    return _train_pair(desk_corpus, tmp_path_factory.mktemp("blind"), TrainConfig.preset("desk", qf_mode=BLIND))


def _val_pairs(desk_corpus, qf):
    images = [(Path(e.clean).name, read_gray(e.clean)) for e in read_manifest(desk_corpus[1])]
    return [(name, img, degrade(img, qf), qf) for name, img in images]


def test_criterion_1_transform_exactness(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    poly_exact = True
    for _ in range(100):
        h, w = 2 * rng.integers(1, 40, 2)
        img = rng.integers(0, 256, (h, w)).astype(np.float64)
        poly_exact &= bool(np.array_equal(polyphase_unpack(polyphase_pack(img)), img))
    dwt_err, parseval_err = 0.0, 0.0
    for _ in range(100):
        img = rng.random((64, 64)) * 255
        packed = dwt_pack(img)
        dwt_err = max(dwt_err, float(np.max(np.abs(dwt_unpack(packed) - img))))
        energy = np.sum(img ** 2)
        parseval_err = max(parseval_err, abs(float(np.sum(packed.tensor ** 2)) - energy) / energy)
    seconds = time.perf_counter() - start
    ok = poly_exact and dwt_err < 1e-9 and parseval_err < 1e-9 and seconds < 10
    verdict(1, ok, f"polyphase exact={poly_exact}  dwt max err={dwt_err:.2e}  "
                   f"parseval rel err={parseval_err:.2e}  {seconds:.2f}s")
    assert ok


def _conv_trial(rng):
    n, c, h, w, k = (int(v) for v in rng.integers(1, 5, 5))
    x = rng.standard_normal((n, c, h, w))
    layer = T.ConvLayer(rng.standard_normal((k, c, 3, 3)), rng.standard_normal(k))
    proj = rng.standard_normal((n, k, h, w))
    f = lambda: float(np.sum(T.conv2d_forward(x, layer) * proj))  # noqa: E731
    gx, gw, gb = T.conv2d_backward(x, layer, proj)
    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, layer.weight)),
               rel_error(gb, numeric_grad(f, layer.bias)))


def _bn_trial(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(2, 6)), int(rng.integers(1, 6)))
    c = shape[1]
    layer = T.BatchNormLayer(rng.random(c) + 0.5, rng.standard_normal(c), np.zeros(c), np.ones(c))
    x = rng.standard_normal(shape) * 2 + 1
    proj = rng.standard_normal(shape)
    f = lambda: float(np.sum(T.batchnorm_forward(x, layer)[0] * proj))  # noqa: E731
    gx, gg, gb = T.batchnorm_backward(T.batchnorm_forward(x, layer)[1], proj)
    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, layer.gamma)),
               rel_error(gb, numeric_grad(f, layer.beta)))


def _relu_trial(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 1e-4] = 0.5  # keep clear of the kink
    proj = rng.standard_normal(x.shape)
    return rel_error(T.relu_backward(x, proj), numeric_grad(lambda: float(np.sum(T.relu_forward(x) * proj)), x))


def _loss_trial(rng):
    p, t = rng.standard_normal((2, 2, 4, 3, 3))
    return rel_error(T.half_mse_loss(p, t)[1], numeric_grad(lambda: T.half_mse_loss(p, t)[0], p))


def _branch_trial(rng):
    model = init_model(NetworkConfig(2, 3), "pixel", seed=int(rng.integers(1 << 30)))
    for bn in model.batchnorms():
        bn.gamma[:] = rng.random(bn.channels) + 0.5
        bn.beta[:] = rng.standard_normal(bn.channels)
    model.layers[-1].bias[:] = rng.standard_normal(4)
    y, x = rng.random((2, 2, 4, 4, 4))
    bns = model.batchnorms()

    def f():
        saved = [(b.running_mean.copy(), b.running_var.copy()) for b in bns]
        value = loss_and_gradients(model, y, x)[0]
        for b, (m, v) in zip(bns, saved):
            b.running_mean[:], b.running_var[:] = m, v
        return value

    _, grads = loss_and_gradients(model, y, x)
    return max(rel_error(g[name], numeric_grad(f, p))
               for layer, g in zip(model.layers, grads) for name, p in layer.params().items())


def test_criterion_2_gradients(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = {name: max(trial(rng) for _ in range(20)) for name, trial in (
        ("conv", _conv_trial), ("batchnorm", _bn_trial), ("relu", _relu_trial), ("loss", _loss_trial),
        ("branch D=2", _branch_trial))}
    seconds = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and seconds < 60
    verdict(2, ok, "  ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f"  {seconds:.1f}s")
    assert ok


def _classic5_dir() -> Path | None:
    candidates = [os.environ.get("CLASSIC5_DIR"), Path(__file__).parent / "data" / "classic5",
                  Path.home() / "data" / "classic5"]
    for c in candidates:
        if c and Path(c).is_dir() and list_images(c):
            return Path(c)
    return None


def test_criterion_3_jpeg_anchor(verdict):
    root = _classic5_dir()
    if root is None:
        verdict(3, False, "Classic5 images not found; set CLASSIC5_DIR to a folder holding the five images")
        pytest.fail("Classic5 corpus unavailable")
    start = time.perf_counter()
    qfs = (10, 20, 30, 40)
    table = evaluate_corpus(None, None, root, qfs)
    mean = table.mean("jpeg", 10)
    psnr_by = {}
    for s in table.scores:
        psnr_by.setdefault(s.image, {})[s.qf] = s.report.psnr
    monotone = all(all(v[a] < v[b] for a, b in zip(qfs, qfs[1:])) for v in psnr_by.values())
    ref = CLASSIC5_JPEG_QF10
    seconds = time.perf_counter() - start
    ok = (abs(mean.psnr - ref[0]) <= 0.5 and abs(mean.ssim - ref[1]) <= 0.01 and abs(mean.psnr_b - ref[2]) <= 0.5
          and monotone and seconds < 120)
    verdict(3, ok, f"qf10 mean {mean.psnr:.2f}/{mean.ssim:.4f}/{mean.psnr_b:.2f} vs {ref[0]}/{ref[1]}/{ref[2]}  "
                   f"monotone={monotone}  {len(psnr_by)} images  {seconds:.1f}s")
    assert ok


def test_criterion_4_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    psnr_err = ssim_err = 0.0
    for _ in range(10):
        x, y = random_pair(rng)
        psnr_err = max(psnr_err, abs(M.psnr(x, y) - psnr_loop(x, y)))
        ssim_err = max(ssim_err, abs(M.ssim(x, y) - ssim_loop(x, y)))
    board = checkerboard()
    board_ok = M.psnr_b(board, board) == 10 * np.log10(255.0 ** 2 / (0.75 * 255.0 ** 2))
    ordered = 0
    for _ in range(1000):
        x, y = random_pair(rng, tuple(int(v) for v in rng.integers(9, 40, 2)))
        ordered += M.psnr_b(x, y) <= M.psnr(x, y)
    ok = psnr_err < 1e-9 and ssim_err < 1e-4 and board_ok and ordered == 1000
    verdict(4, ok, f"psnr err={psnr_err:.1e}  ssim err={ssim_err:.1e}  checkerboard exact={board_ok}  "
                   f"psnr_b<=psnr on {ordered}/1000")
    assert ok


def test_criterion_5_desk_training(dedicated, verdict):
    parts, ok = [], dedicated.seconds < 15 * 60
    for r in (dedicated.pixel, dedicated.wavelet):
        gain = r.final_val_psnr - r.jpeg_val_psnr
        s = smooth(r.losses, 100)
        drop = 1 - s[-1] / s[99]
        ok &= gain >= 0.3 and drop >= 0.5
        parts.append(f"{r.model.branch.value} {r.jpeg_val_psnr:.2f}->{r.final_val_psnr:.2f} dB ({gain:+.2f}), "
                     f"smoothed loss -{100 * drop:.0f}%")
    verdict(5, ok, "  ".join(parts) + f"  {dedicated.seconds / 60:.1f} min")
    assert ok


def test_criterion_6_fusion_ordering(dedicated, desk_corpus, verdict):
    table = evaluate_pairs(_val_pairs(desk_corpus, 10), dedicated.pixel.model, dedicated.wavelet.model)
    p, w, f = (table.mean(m, 10).psnr for m in ("pixel", "wavelet", "fused"))
    ok = f >= max(p, w) - 0.05 and f >= (p + w) / 2
    verdict(6, ok, f"pixel {p:.3f}  wavelet {w:.3f}  fused {f:.3f} dB")
    assert ok


def test_criterion_7_blind_mode(blind, dedicated, desk_corpus, verdict):
    gains, fused = {}, {}
    for qf in BLIND.qfs:
        table = evaluate_pairs(_val_pairs(desk_corpus, qf), blind.pixel.model, blind.wavelet.model)
        fused[qf] = table.mean("fused", qf).psnr
        gains[qf] = fused[qf] - table.mean("jpeg", qf).psnr
    ded = evaluate_pairs(_val_pairs(desk_corpus, 10), dedicated.pixel.model, dedicated.wavelet.model)
    gap = ded.mean("fused", 10).psnr - fused[10]
    ok = all(g > 0 for g in gains.values()) and gap <= 0.3
    verdict(7, ok, "  ".join(f"qf{q} {g:+.2f}" for q, g in gains.items()) + f"  dedicated-blind at qf10 {gap:+.2f} dB")
    assert ok


def test_criterion_8_timing_shape(dedicated, verdict):
    rows = bench_decode(dedicated.pixel.model, dedicated.wavelet.model, [512], repeats=5)
    ratio = fused_ratio(rows, 512)
    medians = {r.method: r.median for r in rows}
    ok = 1.6 <= ratio <= 2.6
    verdict(8, ok, f"512x512 medians pixel {medians['pixel']:.3f}s wavelet {medians['wavelet']:.3f}s "
                   f"fused {medians['fused']:.3f}s  ratio {ratio:.2f}")
    assert ok


def test_criterion_9_reproducibility(desk_corpus, tmp_path, verdict):
    config = TrainConfig.preset("desk", max_iterations=40, num_patches=256, val_every=20)
    files = ("pixel.ckpt", "pixel.best.ckpt", "pixel.log.tsv", "wavelet.ckpt", "wavelet.best.ckpt", "wavelet.log.tsv")
    for run in ("a", "b"):
        _train_pair(desk_corpus, tmp_path / run, config)
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    ok = len(same) == len(files)
    verdict(9, ok, f"{len(same)}/{len(files)} checkpoint and log files byte-identical across two runs")
    assert ok
