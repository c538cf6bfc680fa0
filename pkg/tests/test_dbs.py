import dataclasses

import numpy as np
import pytest
import scipy.fft

from ddhalftone.dbs import (
    DbsConfig,
    MaskStack,
    build_mask_stack,
    default_target_counts,
    dmdbs_halftone,
    groundtruth_pattern,
)
from ddhalftone.imagecore import constant_patch
from ddhalftone.spectrum import randomized_apsd, rapsd_anisotropy


def full_cost(e, kernel, size):
    """Circular quadratic-form cost computed from scratch (FFT)."""
    offs = np.arange(-kernel.radius, kernel.radius + 1)
    kpad = np.zeros((size, size))
    kpad[np.ix_(offs % size, offs % size)] = kernel.samples
    conv = scipy.fft.irfft2(scipy.fft.rfft2(e) * scipy.fft.rfft2(kpad), s=(size, size))
    return float(np.sum(e * conv))


def toroidal_nn(points, size):
    d = points[:, None, :] - points[None, :, :]
    d = np.minimum(np.abs(d), size - np.abs(d))
    dist = np.hypot(d[..., 0], d[..., 1]).astype(float)
    np.fill_diagonal(dist, np.inf)
    return dist.min(axis=1)


def test_constant_extremes():
    cfg = DbsConfig(seed=1)
    black = dmdbs_halftone(constant_patch(0, 32, 32), cfg)
    assert (black.pixels == 0).all()
    white = dmdbs_halftone(constant_patch(255, 32, 32), cfg)
    assert (white.pixels == 255).all()


def test_midgray_density_and_monotone_cost():
    cfg = DbsConfig(seed=3)
    log = []
    out = dmdbs_halftone(constant_patch(128, 64, 64), cfg, cost_log=log)
    # toggles drive the ink fraction to the input mean 1 - 128/255
    target = 1.0 - 128.0 / 255.0
    assert abs(out.ink_fraction() - target) <= 2.0 / 4096.0
    assert len(log) > 1000  # the internal spot check ran at least once
    assert all(b < a for a, b in zip(log, log[1:]))


def test_local_minimum_certificate():
    # exhaustive toggle and 3x3-swap scan of the converged pattern, deltas
    # measured by full cost recomputation (independent of the engine's
    # incremental bookkeeping)
    size = 32
    cfg = DbsConfig(seed=5)
    out = dmdbs_halftone(constant_patch(64, size, size), cfg)
    kernel = cfg.kernel(1)
    y = (out.pixels == 255).astype(float)
    xn = np.full((size, size), 64.0 / 255.0)
    e = y - xn
    base = full_cost(e, kernel, size)
    worst = 0.0
    for p in range(size * size):
        r, c = divmod(p, size)
        a = 1.0 - 2.0 * y[r, c]
        e[r, c] += a
        worst = min(worst, full_cost(e, kernel, size) - base)
        e[r, c] -= a
        for dr, dc in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
            qr, qc = (r + dr) % size, (c + dc) % size
            if y[qr, qc] == y[r, c]:
                continue
            e[r, c] += a
            e[qr, qc] -= a
            worst = min(worst, full_cost(e, kernel, size) - base)
            e[r, c] -= a
            e[qr, qc] += a
    assert worst >= -1e-9


def test_incremental_matches_full_recompute():
    size = 64
    cfg = DbsConfig(seed=9, verify=True, verify_every=500)
    log = []
    out = dmdbs_halftone(constant_patch(96, size, size), cfg, cost_log=log)
    kernel = cfg.kernel(1)
    y = (out.pixels == 255).astype(float)
    e = y - np.full((size, size), 96.0 / 255.0)
    recomputed = full_cost(e, kernel, size)
    assert log[-1] == pytest.approx(recomputed, rel=1e-6)


def test_cost_functional_shift_invariance():
    rng = np.random.default_rng(11)
    size = 32
    cfg = DbsConfig(seed=0)
    kernel = cfg.kernel(1)
    e = rng.random((size, size)) - 0.4
    base = full_cost(e, kernel, size)
    rolled = full_cost(np.roll(e, (7, 13), axis=(0, 1)), kernel, size)
    assert rolled == pytest.approx(base, rel=1e-12)


def test_shifted_runs_land_near_equal_cost():
    # runs on a torus-shifted input reach different local minima; the
    # final costs stay close even though the patterns differ
    size = 48
    cfg = DbsConfig(seed=13)
    rng = np.random.default_rng(14)
    x = rng.integers(60, 200, (size, size), dtype=np.uint8)
    from ddhalftone.imagecore import GrayImage

    kernel = cfg.kernel(1)

    def final_cost(img):
        out = dmdbs_halftone(GrayImage(img), cfg)
        e = (out.pixels == 255).astype(float) - img.astype(float) / 255.0
        return full_cost(e, kernel, size)

    a = final_cost(x)
    b = final_cost(np.roll(x, (11, 23), axis=(0, 1)))
    assert b == pytest.approx(a, rel=0.10)


def test_default_target_counts_schedule():
    counts = default_target_counts(256)
    assert counts[0] == 0
    assert counts[1] == 257
    assert counts[255] == 256 * 256
    assert (np.diff(counts) >= 0).all()


def test_target_counts_validation():
    bad = default_target_counts(64).copy()
    bad[10] = bad[12]
    bad[11] = 0  # decreasing
    cfg = DbsConfig(seed=0, target_counts=bad)
    with pytest.raises(ValueError, match="infeasible|non-decreasing"):
        build_mask_stack(64, cfg)
    with pytest.raises(ValueError):
        build_mask_stack(32, DbsConfig(seed=0))  # size too small


def test_mask_stack_counts_and_stacking(mask_stack_256):
    counts = default_target_counts(256)
    for g in (0, 1, 2, 3, 7, 64, 128, 200, 254, 255):
        assert mask_stack_256.black_count(g) == counts[g]
    # stacking probes: black at g-1 stays black at g
    rng = np.random.default_rng(15)
    f = mask_stack_256.first_black_level
    for _ in range(1000):
        r, c = rng.integers(0, 256, 2)
        g = int(rng.integers(1, 256))
        if f[r, c] <= g - 1:  # black in mask g-1
            assert f[r, c] <= g  # still black in mask g


def test_mask_level_one_quality(mask_stack_256):
    pts = np.argwhere(mask_stack_256.first_black_level <= 1)
    assert len(pts) == 257
    nn = toroidal_nn(pts, 256)
    ideal = 15.97
    assert abs(nn.mean() - ideal) <= 0.2 * ideal


def test_scale_switch_reduces_nn_variance():
    cfg = DbsConfig(seed=7)
    on = build_mask_stack(256, cfg, max_level=1)
    off = build_mask_stack(
        256, dataclasses.replace(cfg, two_s_extremes=False), max_level=1
    )
    var_on = toroidal_nn(np.argwhere(on.first_black_level <= 1), 256).var()
    var_off = toroidal_nn(np.argwhere(off.first_black_level <= 1), 256).var()
    assert var_on <= 0.8 * var_off


def test_same_order_sites_minimum_separation(mask_stack_256):
    # Homogeneity of the first order group: every pair of first-group
    # sites should sit farther apart than half the sparsest-tone ideal
    # spacing.  Greedy stacked construction saturates below this bar (the
    # swap descent tolerates pairs near 0.7x the group spacing), so this
    # codifies the target; see the build notes for the analysis.
    pts = np.argwhere(mask_stack_256.first_black_level <= 3)
    nn = toroidal_nn(pts, 256)
    assert nn.min() > 0.5 * 15.9687


def test_mask_stack_roundtrip(tmp_path, mask_stack_256):
    path = tmp_path / "proto.pgm"
    mask_stack_256.save_pgm(path)
    back = MaskStack.from_pgm(path)
    assert np.array_equal(back.first_black_level, mask_stack_256.first_black_level)
    assert back.mask(0).pixels.shape == (256, 256)
    with pytest.raises(ValueError):
        mask_stack_256.mask(256)


def test_groundtruth_cache_layout(tmp_path):
    cfg = DbsConfig(seed=2)
    a = groundtruth_pattern(10, 64, cfg, str(tmp_path))
    expected = tmp_path / "gt" / "64" / "2" / "10.pbm"
    assert expected.exists()
    b = groundtruth_pattern(10, 64, cfg, str(tmp_path))
    assert np.array_equal(a.pixels, b.pixels)
    # extreme tones collapse to solid patterns
    assert (groundtruth_pattern(0, 64, cfg, str(tmp_path)).pixels == 255).all()
    assert (groundtruth_pattern(255, 64, cfg, str(tmp_path)).pixels == 0).all()


def test_groundtruth_spectrum_ring(gt512_g64):
    # at quarter tone the ideal spacing is 2 pixels: the radial profile
    # must peak in the high-frequency band near 0.5 cycles/pixel
    apsd = randomized_apsd(gt512_g64, 128, 50, seed=0)
    stats = rapsd_anisotropy(apsd)
    peak = stats.frequency[int(np.argmax(stats.power))]
    assert 0.35 <= peak <= 0.51


def test_kernel_support_must_fit():
    cfg = DbsConfig(seed=0)
    with pytest.raises(ValueError, match="support"):
        dmdbs_halftone(constant_patch(128, 16, 16), cfg)
