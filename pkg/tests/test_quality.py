import numpy as np
import pytest

from fpadfuse.errors import DegenerateSignature, EmptyProfile, NoValidBlocks
from fpadfuse.imgproc import (
    RIDGE,
    VALLEY,
    BinaryBlock,
    Block,
    GrayImage,
    binarize,
)
from fpadfuse.quality import (
    FEATURE_NAMES,
    QualityConfig,
    Run,
    RidgeValleyProfile,
    abnormal_counts,
    block_quality,
    fda,
    gabor_quality,
    ocl,
    quality_vector,
    ridge_valley_profile,
    rvc,
    rvs,
    track_runs,
)


def block_from_signature(signature):
    """Block whose column means equal the given 1D signature."""
    sig = np.asarray(signature, dtype=float)
    return Block(origin=(0, 0), pixels=np.tile(sig, (16, 1)))


# ---------------------------------------------------------------------------
# fda
# ---------------------------------------------------------------------------

def test_fda_pure_sinusoid():
    x = np.arange(32)
    b = block_from_signature(0.5 + 0.3 * np.sin(2 * np.pi * x / 8))
    assert fda(b) >= 0.99


def test_fda_matches_direct_dft_oracle():
    rng = np.random.default_rng(21)
    sig = rng.random(32)
    b = block_from_signature(sig)
    # independent evaluation of the stated formula
    n = sig.size
    amp = np.array([
        abs(sum(sig[x] * np.exp(-2j * np.pi * f * x / n) for x in range(n)))
        for f in range(1, n // 2 + 1)
    ])
    fmax = int(np.argmax(amp))
    left = amp[fmax - 1] if fmax >= 1 else 0.0
    right = amp[fmax + 1] if fmax + 1 < amp.size else 0.0
    expected = (amp[fmax] + 0.3 * (left + right)) / amp.sum()
    assert fda(b) == pytest.approx(expected, rel=1e-9)


def test_fda_white_noise_low():
    rng = np.random.default_rng(22)
    vals = [fda(block_from_signature(rng.random(32))) for _ in range(100)]
    assert np.mean(vals) < 0.3


def test_fda_constant_signature_degenerate():
    with pytest.raises(DegenerateSignature):
        fda(block_from_signature(np.full(32, 0.5)))


def test_fda_in_unit_interval_random_blocks():
    rng = np.random.default_rng(23)
    for _ in range(200):
        v = fda(block_from_signature(rng.random(rng.integers(8, 48))))
        assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# ocl
# ---------------------------------------------------------------------------

def test_ocl_rank_one_gradients():
    # intensity varies along x only -> dy = 0 -> lambda_min = 0 -> OCL = 1
    x = np.arange(32, dtype=float)
    b = Block(origin=(0, 0), pixels=np.tile(0.5 + 0.3 * np.sin(x), (32, 1)))
    assert ocl(b) == 1.0


def test_ocl_isotropic_gradients():
    # separable paraboloid: dx depends on x only, dy on y only, both
    # odd-symmetric -> a = b and c = 0 exactly -> OCL = 0
    c = np.arange(32, dtype=float) - 15.5
    pixels = (c[None, :] ** 2 + c[:, None] ** 2) / 1000.0
    assert ocl(Block(origin=(0, 0), pixels=pixels)) < 1e-9


def test_ocl_matches_eigen_oracle():
    from fpadfuse.imgproc import gradients

    rng = np.random.default_rng(24)
    for _ in range(20):
        pixels = rng.random((16, 16))
        dx, dy = gradients(pixels)
        cov = np.array([
            [np.mean(dx * dx), np.mean(dx * dy)],
            [np.mean(dx * dy), np.mean(dy * dy)],
        ])
        lmin, lmax = np.linalg.eigvalsh(cov)
        expected = 1.0 - lmin / lmax if lmax > 0 else 0.0
        assert ocl(Block(origin=(0, 0), pixels=pixels)) == pytest.approx(expected, abs=1e-9)


def test_ocl_in_unit_interval_random_blocks():
    rng = np.random.default_rng(25)
    for _ in range(200):
        v = ocl(Block(origin=(0, 0), pixels=rng.random((12, 12))))
        assert 0.0 <= v <= 1.0


def test_ocl_constant_block_zero():
    assert ocl(Block(origin=(0, 0), pixels=np.full((16, 16), 0.3))) == 0.0


# ---------------------------------------------------------------------------
# gabor_quality
# ---------------------------------------------------------------------------

def test_gabor_constant_block_zero():
    b = Block(origin=(0, 0), pixels=np.full((32, 32), 0.7))
    assert gabor_quality(b) == pytest.approx(0.0, abs=1e-9)


def test_gabor_noise_vs_oriented():
    from fpadfuse.quality import _gabor_bank

    cfg = QualityConfig()
    rng = np.random.default_rng(26)
    radius = int(np.ceil(3 * cfg.gabor_sigma))
    size = 2 * radius + 1
    kernels = _gabor_bank(cfg, radius)
    noise_g, noise_mean = [], []
    # block large enough for the response average to settle across many
    # independent window positions
    for trial in range(100):
        pixels = rng.random((96, 96))
        view = np.lib.stride_tricks.sliding_window_view(pixels, (size, size))
        resp = [float(np.abs(np.tensordot(view, k, axes=([2, 3], [0, 1]))).mean())
                for k in kernels]
        g = float(np.std(resp))
        if trial < 3:
            assert gabor_quality(Block(origin=(0, 0), pixels=pixels), cfg) \
                == pytest.approx(g)
        noise_g.append(g)
        noise_mean.append(np.mean(resp))
    # isotropic noise: spread across orientations stays small vs mean response
    assert np.mean(noise_g) <= 0.1 * np.mean(noise_mean)

    # strong sinusoid matching bank orientation 0 and frequency 0.1
    x = np.arange(96, dtype=float)
    oriented = np.tile(0.5 + 0.45 * np.sin(2 * np.pi * 0.1 * x), (96, 1))
    g_oriented = gabor_quality(Block(origin=(0, 0), pixels=oriented), cfg)
    assert g_oriented >= 5.0 * np.mean(noise_g)


# ---------------------------------------------------------------------------
# ridge_valley_profile
# ---------------------------------------------------------------------------

def stripes_labels(rows=16, cols=32, width=4):
    line = ((np.arange(cols) // width) % 2).astype(np.int8)  # ridge/valley bands
    return np.tile(line, (rows, 1))


def test_profile_perfect_stripes():
    profile = ridge_valley_profile(BinaryBlock(labels=stripes_labels()))
    assert profile.runs
    assert all(r.width == 4 for r in profile.runs)


def test_profile_drops_edge_runs():
    # one row: runs 3 | 4 | 4 | 5 -> interior runs are the two 4s
    row = np.array([0] * 3 + [1] * 4 + [0] * 4 + [1] * 5, dtype=np.int8)
    profile = ridge_valley_profile(BinaryBlock(labels=np.tile(row, (4, 1))))
    assert {r.width for r in profile.runs} == {4}
    assert len(profile.runs) == 8  # 2 interior runs x 4 rows


def test_profile_single_run_rows_empty():
    with pytest.raises(EmptyProfile):
        ridge_valley_profile(BinaryBlock(labels=np.ones((8, 8), dtype=np.int8)))


def oracle_runs(labels):
    """Brute-force scanline run scanner."""
    out = []
    for row in range(labels.shape[0]):
        runs = []
        start = 0
        for col in range(1, labels.shape[1] + 1):
            if col == labels.shape[1] or labels[row, col] != labels[row, start]:
                runs.append((row, start, col - start, int(labels[row, start])))
                start = col
        interior = runs[1:-1]
        if len(interior) >= 2:
            out.extend(interior)
    return out


def test_profile_matches_scanline_oracle():
    rng = np.random.default_rng(27)
    for _ in range(20):
        labels = (rng.random((12, 24)) < 0.5).astype(np.int8)
        expected = oracle_runs(labels)
        try:
            profile = ridge_valley_profile(BinaryBlock(labels=labels))
            got = [(r.row, r.start, r.width, r.label) for r in profile.runs]
        except EmptyProfile:
            got = []
        assert got == expected


# ---------------------------------------------------------------------------
# rvc
# ---------------------------------------------------------------------------

def profile_of_widths(ridge_widths, valley_widths):
    """Single-row profile with the given interior run widths."""
    runs = []
    start = 0
    for w in ridge_widths:
        runs.append(Run(row=0, start=start, width=w, label=RIDGE))
        start += w + 1
    for w in valley_widths:
        runs.append(Run(row=0, start=start, width=w, label=VALLEY))
        start += w + 1
    return RidgeValleyProfile(runs=runs)


def test_rvc_identical_widths_zero():
    assert rvc(profile_of_widths([4, 4, 4], [4, 4])) == 0.0


def test_rvc_worked_example():
    # ridge widths {4,4,8,8} (mean 6, total |dev| 8), valley {4,4,4,4}
    # (mean 4, dev 0); totals 24 and 16 -> (8+0)/40 = 0.2
    assert rvc(profile_of_widths([4, 4, 8, 8], [4, 4, 4, 4])) == pytest.approx(0.2)


def test_rvc_single_runs_zero():
    assert rvc(profile_of_widths([6], [3])) == 0.0


def test_rvc_matches_independent_script():
    rng = np.random.default_rng(28)
    for _ in range(20):
        rw = rng.integers(1, 10, size=rng.integers(1, 8)).tolist()
        vw = rng.integers(1, 10, size=rng.integers(1, 8)).tolist()
        expected = (
            np.abs(np.array(rw) - np.mean(rw)).sum()
            + np.abs(np.array(vw) - np.mean(vw)).sum()
        ) / (sum(rw) + sum(vw))
        assert rvc(profile_of_widths(rw, vw)) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# run tracking, abnormal counts, rvs
# ---------------------------------------------------------------------------

def labels_from_boundaries(rows):
    """rows: list of (label_sequence, width_sequence) -> padded label matrix."""
    width = max(sum(ws) for _, ws in rows) + 8
    out = np.zeros((len(rows), width), dtype=np.int8)
    for i, (labs, ws) in enumerate(rows):
        # pad with an edge valley run on each side so interior runs survive
        pos = 4
        out[i, :4] = 1 - labs[0]
        for lab, w in zip(labs, ws):
            out[i, pos:pos + w] = lab
            pos += w
        out[i, pos:] = 1 - labs[-1]
    return out


def test_tracking_perfect_stripes_zero_counts():
    profile = ridge_valley_profile(BinaryBlock(labels=stripes_labels()))
    assert abnormal_counts(profile, 1.0) == (0, 0)
    assert rvs(profile) == (0.0, 0.0)


def test_tracking_alternating_width_ridge():
    # leading fixed ridge keeps rows at >= 2 interior runs; the trailing
    # ridge alternates width 4, 8 (std 2) while staying overlapped
    rows = []
    for i in range(8):
        w = 4 if i % 2 == 0 else 8
        rows.append(([RIDGE, VALLEY, RIDGE], [4, 5, w]))
    labels = labels_from_boundaries(rows)
    profile = ridge_valley_profile(BinaryBlock(labels=labels))
    r_ab, v_ab = abnormal_counts(profile, 1.0)
    assert r_ab == 1
    assert v_ab == 0
    assert abnormal_counts(profile, np.inf) == (0, 0)
    chains = track_runs(profile)
    stds = sorted(np.std(w) for lab, w in chains if lab == RIDGE)
    assert stds == pytest.approx([0.0, 2.0])


def test_rvs_mean_of_chain_stds():
    # two tracked ridges with width stds 1 and 3 -> RWS = 2
    labels = np.zeros((2, 32), dtype=np.int8)
    labels[0, 3:7] = RIDGE     # widths 4 then 6: std 1
    labels[1, 3:9] = RIDGE
    labels[0, 17:19] = RIDGE   # widths 2 then 8: std 3
    labels[1, 17:25] = RIDGE
    profile = ridge_valley_profile(BinaryBlock(labels=labels))
    rws_val, vws_val = rvs(profile)
    assert rws_val == pytest.approx(2.0)
    # the tracked valley between them shrinks from 10 to 8: std 1
    assert vws_val == pytest.approx(1.0)


def test_rvs_jittered_stripes_monte_carlo():
    # ridges centered at fixed columns with Gaussian width jitter; tracked
    # width std should land near the generating sigma
    rng = np.random.default_rng(29)
    vals = []
    for _ in range(100):
        labels = np.zeros((16, 64), dtype=np.int8)
        for row in range(16):
            for center in (10, 30, 50):
                w = int(np.clip(round(8 + rng.normal(0, 1.5)), 3, 14))
                start = center - w // 2
                labels[row, start:start + w] = RIDGE
        profile = ridge_valley_profile(BinaryBlock(labels=labels))
        vals.append(rvs(profile)[0])
    assert 1.0 <= np.mean(vals) <= 2.0


def test_tracking_ties_break_leftmost():
    # a run splitting into two equal-overlap children follows the left one
    labels = np.array([
        [0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 2, 0],
        [0, 1, 1, 1, 0, 1, 1, 1, 0, 0, 2, 0],
    ], dtype=np.int8)
    labels[labels == 2] = 1  # trailing interior ridge to keep rows >= 2 runs
    profile = ridge_valley_profile(BinaryBlock(labels=labels))
    chains = track_runs(profile)
    ridge_chains = [(w.tolist()) for lab, w in chains if lab == RIDGE]
    # the 6-wide run continues into the left 3-wide child
    assert [6.0, 3.0] in ridge_chains


# ---------------------------------------------------------------------------
# quality_vector and block_quality
# ---------------------------------------------------------------------------

def synth_live(seed=0):
    from fpadfuse.data import SynthParams, synth_fingerprint
    return synth_fingerprint(SynthParams(seed=seed), "live")


def test_quality_vector_clean_fingerprint():
    from fpadfuse.data import SynthParams, synth_fingerprint
    img = synth_fingerprint(
        SynthParams(seed=0, orientation_amp=0.0, live_noise=0.0), "live")
    q = quality_vector(img).as_dict()
    assert q["rws_mean"] <= 0.5
    assert q["fda_mean"] >= 0.9
    assert q["ocl_mean"] >= 0.9


def test_quality_vector_jitter_raises_rws():
    from fpadfuse.data import SynthParams, synth_fingerprint
    clean = quality_vector(synth_fingerprint(
        SynthParams(seed=3, orientation_amp=0.0, live_noise=0.0), "live"))
    jittered = quality_vector(synth_fingerprint(
        SynthParams(seed=3, orientation_amp=0.0, live_noise=0.0, width_jitter=2.0,
                    blur_width=1, noise_sigma=0.0), "spoof"))
    assert jittered.as_dict()["rws_mean"] > clean.as_dict()["rws_mean"]


def test_quality_vector_blank_image():
    img = GrayImage(np.full((64, 64), 200, dtype=np.uint8))
    with pytest.raises(NoValidBlocks):
        quality_vector(img)


def test_quality_vector_deterministic():
    img = synth_live(5)
    a = quality_vector(img).values
    b = quality_vector(img).values
    assert np.array_equal(a, b)


def test_quality_vector_order_and_names():
    assert len(FEATURE_NAMES) == 13
    img = synth_live(1)
    q = quality_vector(img)
    assert q.values.shape == (13,)
    assert np.all(np.isfinite(q.values))
    d = q.as_dict()
    assert list(d) == list(FEATURE_NAMES)


def test_single_block_sigmas_zero():
    # a 32x32 image holds exactly one block: every sigma aggregate is 0
    img = GrayImage(synth_live(2).data[:32, :32])
    q = quality_vector(img).as_dict()
    assert q["rws_std"] == 0.0
    assert q["vws_std"] == 0.0
    assert q["rvc_std"] == 0.0
    assert q["fda_std"] == 0.0
    assert q["ocl_std"] == 0.0


def test_block_features_intensity_scaling():
    rng = np.random.default_rng(31)
    img = synth_live(7)
    blocks_src = img.as_float()[:32, :32]
    base = block_quality(Block(origin=(0, 0), pixels=blocks_src))
    for a in (0.5, 2.0):
        scaled = block_quality(Block(origin=(0, 0), pixels=a * blocks_src))
        assert scaled.fda == pytest.approx(base.fda, abs=1e-9)
        assert scaled.ocl == pytest.approx(base.ocl, abs=1e-9)
        assert scaled.rvc == pytest.approx(base.rvc, abs=1e-9)
        assert scaled.rws == pytest.approx(base.rws, abs=1e-9)
        assert scaled.vws == pytest.approx(base.vws, abs=1e-9)
        assert scaled.r_ab == base.r_ab
        assert scaled.v_ab == base.v_ab
        # the Gabor spread scales linearly rather than staying fixed
        assert scaled.gabor == pytest.approx(a * base.gabor, rel=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        QualityConfig(fda_weight=-0.1)
    with pytest.raises(ValueError):
        QualityConfig(t_w=0.0)
    with pytest.raises(ValueError):
        QualityConfig(gabor_orientations=2)
