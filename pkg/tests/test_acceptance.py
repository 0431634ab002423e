"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines as they complete.  Criteria 5-7 train real models and together
take on the order of 15 minutes on two CPU cores.
"""

import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage
from scipy import stats as sps

from hairbench import cli, engine, hairsim, image_io, metrics, model, pipeline
from hairbench import stats as hbstats
from hairbench.engine import AdamState, Tensor, adam_step, conv2d, deconv2d
from hairbench.loss import LossWeights, MaskedPair, reconstruction_loss

from oracles import (conv2d_direct, deconv2d_scatter, finite_diff,
                     psnr_hvs_reference)
from util import make_texture, write_clean_dir


@contextmanager
def criterion(num: int, description: str):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\n[criterion {num}] FAIL  {description}  ({time.time()-start:.1f}s)")
        raise
    print(f"\n[criterion {num}] PASS  {description}  ({time.time()-start:.1f}s)")


def _t(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------------------
# shared fixtures for the training-based criteria
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def dataset(workdir):
    """100 synthetic clean images, split 70/30 with procedural hair."""
    write_clean_dir(workdir / "clean", 100, size=64, seed=2024)
    manifest = hairsim.build_dataset(workdir / "clean", hairsim.DatasetRecipe(),
                                     workdir / "ds", split=0.7, seed=2024)
    base = manifest.parent
    for sub in ("test_clean", "test_corrupted"):
        (workdir / sub).mkdir(exist_ok=True)
    for rec in hairsim.load_manifest(manifest):
        if rec["split"] != "test":
            continue
        name = Path(rec["clean_path"]).name
        shutil.copy(base / rec["clean_path"], workdir / "test_clean" / name)
        shutil.copy(base / rec["corrupted_path"], workdir / "test_corrupted" / name)
    return manifest


@pytest.fixture(scope="module")
def trained_desk(dataset, workdir):
    cfg = pipeline.TrainConfig(manifest=str(dataset),
                               checkpoint_dir=str(workdir / "ckpt"),
                               preset="desk", lr=1e-4, batch_size=4,
                               max_epochs=110, patience=12, seed=11)
    return pipeline.train(cfg)


# ---------------------------------------------------------------------------
# criterion 1: end-to-end gradient correctness
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    with criterion(1, "end-to-end finite-difference gradient check (rel < 1e-4)"):
        start = time.time()
        cfg = model.ModelConfig.desk(input_size=16)
        net = model.build(cfg, seed=3)
        rng = np.random.default_rng(4)
        x = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        gt = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        mask = (rng.uniform(0, 1, (1, 1, 16, 16)) < 0.25).astype(float)
        weights = LossWeights()

        def loss_value() -> float:
            pred = net.forward(Tensor(x))
            pair = MaskedPair(pred, Tensor(gt), Tensor(mask))
            return reconstruction_loss(pair, weights).item()

        pred = net.forward(Tensor(x))
        pair = MaskedPair(pred, Tensor(gt), Tensor(mask))
        reconstruction_loss(pair, weights).backward()

        names = list(net.params)
        sizes = np.array([net.params[n].size for n in names])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(sizes.sum())
        picks = np.random.default_rng(5).choice(total, size=50, replace=False)

        worst = 0.0
        for flat_idx in picks:
            slot = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            name = names[slot]
            local = int(flat_idx - offsets[slot])
            p = net.params[name]
            fd = finite_diff(loss_value, p.data, [local], eps=1e-5)[0]
            analytic = p.grad.reshape(-1)[local]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, rel)
        assert worst < 1e-4, f"worst relative error {worst:.2e}"
        elapsed = time.time() - start
        assert elapsed < 120.0, f"gradient check took {elapsed:.0f}s (budget 120s)"


# ---------------------------------------------------------------------------
# criterion 2: conv/deconv oracles and adjoint identity
# ---------------------------------------------------------------------------


def test_criterion_2_conv_deconv_oracles():
    with criterion(2, "200 randomized conv/deconv oracle cases + adjoint identity"):
        rng = np.random.default_rng(6)
        for case in range(100):
            b = int(rng.integers(1, 3))
            c = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            h = int(rng.choice([4, 6, 8]))
            stride = int(rng.choice([1, 2]))
            x = rng.normal(size=(b, c, h, h))
            k = rng.normal(size=(f, c, 3, 3))
            bias = rng.normal(size=f)
            got = conv2d(_t(x), _t(k), _t(bias), stride=stride).data
            want = conv2d_direct(x, k, bias, stride)
            assert np.max(np.abs(got - want)) < 1e-12, f"conv case {case}"

        for case in range(100):
            b = int(rng.integers(1, 3))
            c = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            h = int(rng.choice([2, 3, 4]))
            x = rng.normal(size=(b, c, h, h))
            k = rng.normal(size=(c, f, 3, 3))
            bias = rng.normal(size=f)
            got = deconv2d(_t(x), _t(k), _t(bias)).data
            want = deconv2d_scatter(x, k, bias)
            assert np.max(np.abs(got - want)) < 1e-12, f"deconv case {case}"

        for case in range(50):
            c = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            h = int(rng.choice([4, 6, 8]))
            x = rng.normal(size=(1, c, h, h))
            y = rng.normal(size=(1, f, h // 2, h // 2))
            k = rng.normal(size=(f, c, 3, 3))
            lhs = float((conv2d(_t(x), _t(k), _t(np.zeros(f)), 2).data * y).sum())
            rhs = float((deconv2d(_t(y), _t(k), _t(np.zeros(c))).data * x).sum())
            assert abs(lhs - rhs) < 1e-10, f"adjoint case {case}"


# ---------------------------------------------------------------------------
# criterion 3: metric axioms
# ---------------------------------------------------------------------------


def test_criterion_3_metric_axioms():
    with criterion(3, "metric axioms, PSNR fixture, HVS oracle within 0.01 dB"):
        rng = np.random.default_rng(7)
        img = (make_texture(rng, size=64) * 255.0).round()

        values = metrics.compute_all(img, img)
        assert values["MSE"] == 0.0 and values["RMSE"] == 0.0
        for name in ("PSNR", "PSNR_HVS", "PSNR_HVS_M"):
            assert values[name] == metrics.PSNR_CAP_DB
        for name in ("SSIM", "MSSSIM", "UQI"):
            assert abs(values[name] - 1.0) < 1e-12
        assert abs(values["VIF"] - 1.0) < 1e-6

        for amp in (3, 11, 37, 80):
            noisy = np.clip(img + rng.normal(0, amp, img.shape), 0, 255).round()
            assert abs(metrics.rmse(img, noisy) ** 2 - metrics.mse(img, noisy)) < 1e-9

        a = np.full((32, 32), 100.0)
        b = np.full((32, 32), 110.0)
        assert abs(metrics.psnr(a, b) - 28.131) < 1e-3

        for i, amp in enumerate((2, 5, 9, 14, 20, 28, 38, 52, 70, 95)):
            noise_rng = np.random.default_rng(100 + i)
            noisy = np.clip(img + noise_rng.normal(0, amp, img.shape), 0, 255).round()
            ref_m, ref_plain = psnr_hvs_reference(img, noisy)
            assert abs(metrics.psnr_hvs(img, noisy) - ref_plain) < 0.01
            assert abs(metrics.psnr_hvs_m(img, noisy) - ref_m) < 0.01


# ---------------------------------------------------------------------------
# criterion 4: statistics oracles
# ---------------------------------------------------------------------------


def test_criterion_4_statistics_oracles():
    with criterion(4, "Wilcoxon/t fixtures, Shapiro-Wilk reference, verdict symmetry"):
        p = hbstats.wilcoxon_signed_rank(np.array([1.0, 2, 3, 4, 5]), np.zeros(5))
        assert p == 0.0625

        p = hbstats.paired_t_test(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert abs(p - 0.0742) < 1e-3

        rng = np.random.default_rng(8)
        for i in range(20):
            n = int(rng.integers(3, 800))
            kind = i % 4
            if kind == 0:
                x = rng.normal(0, 1, n)
            elif kind == 1:
                x = rng.exponential(1.5, n)
            elif kind == 2:
                x = rng.uniform(-1, 1, n) ** 3
            else:
                x = rng.standard_t(4, n)
            _, mine = hbstats.shapiro_wilk(x)
            _, ref = sps.shapiro(x)
            assert abs(mine - ref) < 0.01, f"fixture {i}: {mine} vs {ref}"

        flip = {hbstats.BETTER_STRONG: hbstats.WORSE_STRONG,
                hbstats.WORSE_STRONG: hbstats.BETTER_STRONG,
                hbstats.BETTER_WEAK: hbstats.WORSE_WEAK,
                hbstats.WORSE_WEAK: hbstats.BETTER_WEAK}
        for i in range(100):
            n = int(rng.integers(5, 50))
            a = rng.normal(rng.uniform(-1, 1), 1.0, n)
            b = a + rng.normal(rng.uniform(-0.5, 0.5), rng.uniform(0.1, 1.0), n)
            fwd = hbstats.verdict_for(hbstats.PairedSampleSet(
                "A", "B", "x", tuple(a), tuple(b), True))
            rev = hbstats.verdict_for(hbstats.PairedSampleSet(
                "B", "A", "x", tuple(b), tuple(a), True))
            assert rev.classification == flip[fwd.classification], f"set {i}"
            assert abs(fwd.p_value - rev.p_value) < 1e-12


# ---------------------------------------------------------------------------
# criterion 5: learnability (overfit smoke test)
# ---------------------------------------------------------------------------


def test_criterion_5_learnability(workdir):
    with criterion(5, "desk preset overfits 4 pairs to > 30 dB within 2000 steps"):
        start = time.time()
        rng = np.random.default_rng(9)
        xs, ys, ms = [], [], []
        for i in range(4):
            clean = make_texture(rng, size=64)
            sample = hairsim.generate_strands(clean, hairsim.StrandParams(seed=500 + i))
            xs.append(image_io.to_chw(sample.corrupted))
            ys.append(image_io.to_chw(sample.clean))
            ms.append(sample.mask[None, :, :].astype(np.float64))

        with engine.precision("float32"):
            net = model.build(model.ModelConfig.desk(), seed=0)
            params = net.state_arrays()
            adam = AdamState()
            x = Tensor(np.stack(xs))
            y = Tensor(np.stack(ys))
            m = Tensor(np.stack(ms))
            weights = LossWeights()
            reached = None
            psnr = 0.0
            for step in range(1, 2001):
                pred = net.forward(x)
                pair = MaskedPair(pred, y, m)
                loss = reconstruction_loss(pair, weights)
                loss.backward()
                grads = {n: p.grad for n, p in net.named_parameters()}
                adam_step(params, grads, adam, 1e-4)
                if step % 25 == 0:
                    psnr = float(np.mean([
                        metrics.psnr(np.round(t * 255.0), np.round(p * 255.0))
                        for p, t in zip(pred.data, y.data)]))
                    if psnr > 30.0:
                        reached = step
                        break
        elapsed = time.time() - start
        assert reached is not None, f"train PSNR only {psnr:.2f} dB after 2000 steps"
        assert elapsed < 900.0, f"took {elapsed:.0f}s (budget 900s)"
        print(f"  -> {psnr:.2f} dB at step {reached}, {elapsed:.0f}s", end="")


# ---------------------------------------------------------------------------
# criterion 6: desk-scale ordering reproduction
# ---------------------------------------------------------------------------


def test_criterion_6_ordering_reproduction(dataset, trained_desk, workdir):
    with criterion(6, "trained desk model beats copy-input and median baselines"):
        pipeline.infer(trained_desk.checkpoint_dir, workdir / "test_corrupted",
                       workdir / "model_out")
        copy_dir = workdir / "copy_input"
        median_dir = workdir / "median3"
        copy_dir.mkdir(exist_ok=True)
        median_dir.mkdir(exist_ok=True)
        for p in sorted((workdir / "test_corrupted").glob("*.png")):
            shutil.copy(p, copy_dir / p.name)
            img = image_io.load_image(p)
            med = np.stack([ndimage.median_filter(img[:, :, c], size=3)
                            for c in range(3)], axis=2)
            image_io.save_image(median_dir / p.name, med)

        code = cli.main(["compare", "--ref", str(workdir / "test_clean"),
                         "--out", str(workdir / "cmp"),
                         str(workdir / "model_out"), str(copy_dir), str(median_dir)])
        assert code == 0

        doc = (workdir / "cmp" / "verdicts.csv").read_text().splitlines()
        header = doc[0].split(",")
        rows = {line.split(",")[0]: line.split(",") for line in doc[1:]}
        for rival in ("copy_input", "median3"):
            row = rows[f"model_out vs {rival}"]
            for metric_name in ("MSE", "PSNR", "MSSSIM"):
                cell = row[header.index(metric_name)]
                assert cell.endswith(hbstats.BETTER_STRONG), \
                    f"model_out vs {rival} on {metric_name}: {cell}"

        # identity preservation: held-out hairless inputs (the clean test
        # images, never seen in training) pass through nearly unchanged
        pipeline.infer(trained_desk.checkpoint_dir, workdir / "test_clean",
                       workdir / "identity_out")
        names = sorted(p.name for p in (workdir / "test_clean").glob("*.png"))
        psnrs = []
        for name in names:
            src = image_io.load_image(workdir / "test_clean" / name)
            out = image_io.load_image(workdir / "identity_out" / name)
            psnrs.append(metrics.psnr(np.round(src * 255.0), np.round(out * 255.0)))
        assert float(np.mean(psnrs)) > 25.0, \
            f"mean identity PSNR {np.mean(psnrs):.2f} dB"


# ---------------------------------------------------------------------------
# criterion 7: ablation direction
# ---------------------------------------------------------------------------


def test_criterion_7_ablation_direction(dataset, workdir):
    with criterion(7, "dropping the foreground L1 term degrades MSE and PSNR"):
        base = pipeline.TrainConfig(manifest=str(dataset),
                                    checkpoint_dir=str(workdir / "ab" / "base"),
                                    preset="desk", lr=1e-4, batch_size=4,
                                    max_epochs=14, patience=14, seed=11)
        table = pipeline.ablate(base, ["drop-l1fg"], workdir / "ablation")
        full = table["baseline"]
        dropped = table["drop-l1fg"]
        assert dropped["MSE"] > full["MSE"], \
            f"MSE {dropped['MSE']:.2f} !> {full['MSE']:.2f}"
        assert dropped["PSNR"] < full["PSNR"], \
            f"PSNR {dropped['PSNR']:.2f} !< {full['PSNR']:.2f}"
        print(f"  -> MSE {full['MSE']:.1f} vs {dropped['MSE']:.1f}, "
              f"PSNR {full['PSNR']:.2f} vs {dropped['PSNR']:.2f}", end="")


# ---------------------------------------------------------------------------
# criterion 8: dataset invariants
# ---------------------------------------------------------------------------


def test_criterion_8_dataset_invariants(dataset, tmp_path):
    with criterion(8, "mask-consistency on every sample; manifest determinism"):
        base = dataset.parent
        records = hairsim.load_manifest(dataset)
        assert len(records) == 100
        for rec in records:
            sample = hairsim.load_sample(base / rec["clean_path"],
                                         base / rec["corrupted_path"],
                                         base / rec["mask_path"],
                                         rec["provenance"])
            sample.validate()

        write_clean_dir(tmp_path / "clean", 8, size=32, seed=77)
        m1 = hairsim.build_dataset(tmp_path / "clean", hairsim.DatasetRecipe(),
                                   tmp_path / "d1", seed=5)
        m2 = hairsim.build_dataset(tmp_path / "clean", hairsim.DatasetRecipe(),
                                   tmp_path / "d2", seed=5)
        assert m1.read_bytes() == m2.read_bytes()
        for rec1, rec2 in zip(hairsim.load_manifest(m1), hairsim.load_manifest(m2)):
            b1 = (m1.parent / rec1["corrupted_path"]).read_bytes()
            b2 = (m2.parent / rec2["corrupted_path"]).read_bytes()
            assert b1 == b2
