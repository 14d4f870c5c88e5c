"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the criterion lines
are printed in the "acceptance criteria" section of the terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate, special, stats as sps

from micsweep.audio_io import AudioBuffer
from micsweep.cli import cli_main
from micsweep.dsp import (BUTTERWORTH_Q, FilterKind, FilterSpec, apply_cascade, design_biquad,
                          fft_convolve, magnitude_response)
from micsweep.fixtures import NoiseClass
from micsweep.metrics import SNR_METRIC, wer, wer_aggregate
from micsweep.pipeline import (HP_FREQS, LP_FREQS, PEAK_FREQS, PEAK_QS, Condition, MicProfile,
                               condition_snr, default_manifest_dict, default_selection, full_grid,
                               load_manifest, run_sweep)
from micsweep.stats import anova_by, anova_oneway, f_cdf

from .conftest import ci_manifest_dict

FS = 48000


# ------------------------------------------------------------------ oracles

def direct_convolution(x, h):
    out = np.zeros(len(x) + len(h) - 1)
    for i, hi in enumerate(h):
        out[i:i + len(x)] += hi * x
    return out


def brute_force_edit_cost(ref, hyp):
    """Minimum over every monotone pairing of positions; unpaired words cost 1 each."""
    n, m = len(ref), len(hyp)
    best = n + m
    for k in range(min(n, m) + 1):
        for ri in itertools.combinations(range(n), k):
            for hi in itertools.combinations(range(m), k):
                best = min(best, sum(ref[a] != hyp[b] for a, b in zip(ri, hi)) + n + m - 2 * k)
    return best


def f_cdf_quadrature(x, d1, d2):
    a, b = d1 / 2, d2 / 2
    u = d1 * x / (d1 * x + d2)
    log_beta = special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)
    val, _ = integrate.quad(lambda t: (1 - t) ** (b - 1), 0.0, u, weight="alg", wvar=(a - 1, 0.0),
                            epsabs=1e-14, epsrel=1e-12, limit=200)
    return val / math.exp(log_beta)


@pytest.fixture(scope="module")
def default_sweep():
    """The full default synthetic sweep, rendered once for criteria 3 and 6."""
    manifest = load_manifest(default_manifest_dict(seed=0))
    t0 = time.perf_counter()
    rows = run_sweep(manifest, workers=1)
    return manifest, rows, time.perf_counter() - t0


# ----------------------------------------------------------------- criteria

def test_criterion_1_filter_design(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for fc in HP_FREQS + LP_FREQS:
        for kind in (FilterKind.HIGH_PASS2, FilterKind.LOW_PASS2):
            c = design_biquad(FilterSpec(kind, fc, BUTTERWORTH_Q), FS)
            worst = max(worst, abs(magnitude_response(c, [fc], FS)[0] - 20 * math.log10(math.sqrt(0.5))))
    for fc in PEAK_FREQS:
        for q in PEAK_QS:
            c = design_biquad(FilterSpec(FilterKind.PEAK2, fc, q, 20.0), FS)
            worst = max(worst, abs(magnitude_response(c, [fc], FS)[0] - 20.0))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.05 and elapsed < 1.0
    criterion(1, ok, f"max |H(fc)| error {worst:.2e} dB (tol 0.05), {elapsed:.3f} s (< 1 s)")
    assert ok


def test_criterion_2_convolution_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        x = rng.normal(size=rng.integers(1, 4097))
        h = rng.normal(size=rng.integers(1, 4097))
        worst = max(worst, float(np.max(np.abs(fft_convolve(x, h) - direct_convolution(x, h)))))
    ok = worst <= 1e-9
    criterion(2, ok, f"200 pairs, max abs error {worst:.2e} (tol 1e-9)")
    assert ok


@pytest.mark.slow
def test_criterion_3_grid_and_sweep_counts(criterion, default_sweep, tmp_path):
    manifest, rows, full_elapsed = default_sweep
    n_grid = len(full_grid())
    n_sel = len(default_selection())
    n_cond = len(manifest.conditions())
    n_rows = sum(r.metric == SNR_METRIC for r in rows)
    ci = load_manifest(ci_manifest_dict(tmp_path))
    t0 = time.perf_counter()
    ci_rows = run_sweep(ci, workers=1)
    ci_elapsed = time.perf_counter() - t0
    ok = (n_grid == 225 and n_sel == 113 and n_cond == 1017 and n_rows == 1017 * 20
          and len(ci.conditions()) == 15 and len(ci_rows) == 300 and ci_elapsed < 30.0)
    criterion(3, ok, f"grid {n_grid}, selection {n_sel}, conditions {n_cond}, SNR rows {n_rows}; "
                     f"full sweep {full_elapsed:.0f} s, CI sweep {ci_elapsed:.1f} s (< 30 s)")
    assert ok


def test_criterion_4_wer_oracle(criterion):
    mismatches = checked = 0
    for n in range(0, 7):
        for m in range(0, 7):
            for ref in itertools.product("ab", repeat=n):
                if n == 0:
                    continue
                for hyp in itertools.product("ab", repeat=m):
                    checked += 1
                    mismatches += wer(ref, hyp).errors != brute_force_edit_cost(ref, hyp)
    # Pooling by hand: 2 sentences of 4 and 6 words; 1 substitution, then a missing transcript.
    refs = [["a", "b", "c", "d"], ["e", "f", "g", "h", "i", "j"]]
    pooled = wer_aggregate(refs, {0: ["a", "x", "c", "d"]})
    pooled_ok = pooled == pytest.approx((1 + 6) / 10, abs=1e-15)
    ok = mismatches == 0 and pooled_ok
    criterion(4, ok, f"{checked} pairs up to length 6, {mismatches} mismatches; pooled {pooled} vs 0.7")
    assert ok


def test_criterion_5_anova_oracle(criterion):
    rng = np.random.default_rng(5)
    worst_f = worst_p = 0.0
    for _ in range(50):
        a, b = rng.normal(0, 1, rng.integers(2, 40)), rng.normal(0.3, 1.5, rng.integers(2, 40))
        t = sps.ttest_ind(a, b, equal_var=True)
        r = anova_oneway([a, b])
        worst_f = max(worst_f, abs(r.f_stat - t.statistic ** 2) / t.statistic ** 2)
        worst_p = max(worst_p, abs(r.p_value - t.pvalue))
    worst_cdf = 0.0
    for d1 in (1, 2, 3, 4, 7, 12, 30, 60):
        for d2 in (1, 2, 5, 11, 25, 60):
            for x in (0.05, 0.5, 1.0, 2.0, 3.5, 10.0, 50.0):
                worst_cdf = max(worst_cdf, abs(f_cdf(x, d1, d2) - f_cdf_quadrature(x, d1, d2)))
    same = anova_oneway([[2, 3, 4], [2, 3, 4]])
    split = anova_oneway([[1, 1, 1], [2, 2, 2]])
    degenerate_ok = (same.f_stat, same.p_value) == (0.0, 1.0) and (split.f_stat, split.p_value) == (math.inf, 0.0)
    ok = worst_f <= 1e-9 and worst_p <= 1e-9 and worst_cdf <= 1e-8 and degenerate_ok
    criterion(5, ok, f"F vs t^2 rel {worst_f:.1e}, p vs t-test {worst_p:.1e} (tol 1e-9); "
                     f"f_cdf vs quadrature {worst_cdf:.1e} (tol 1e-8); degenerate rules {degenerate_ok}")
    assert ok


@pytest.mark.slow
def test_criterion_6_noise_trend(criterion, default_sweep):
    manifest, rows, _ = default_sweep
    medians = {}
    for car in manifest.cars:
        for noise in NoiseClass:
            vals = [r.value for r in rows if r.car == car and r.noise == noise.value and r.metric == SNR_METRIC]
            medians[(car, noise)] = float(np.median(vals))
    trend_ok = all(medians[(c, NoiseClass.IDLE)] > medians[(c, NoiseClass.CITY)] > medians[(c, NoiseClass.HIGHWAY)]
                   for c in manifest.cars)
    res = anova_by(rows, SNR_METRIC, "noise")
    ok = trend_ok and res.p_value < 1e-6
    detail = "; ".join(f"{c}: " + "/".join(f"{medians[(c, n)]:.1f}" for n in NoiseClass) for c in manifest.cars)
    criterion(6, ok, f"median SNR idle/city/highway dB {detail}; ANOVA by noise p={res.p_value:.2e} (< 1e-6)")
    assert ok


def test_criterion_7_bandwidth_insensitivity(criterion):
    manifest = load_manifest(default_manifest_dict(seed=0))
    stim = manifest.stimulus.samples
    spectrum = np.abs(np.fft.rfft(stim)) ** 2
    freqs = np.fft.rfftfreq(stim.size, 1 / FS)
    above = float(spectrum[freqs > 3500].sum() / spectrum.sum())
    # Per-sentence SNR across the LP2 corners at every fixed HP2, for every car and noise class.
    spread = 0.0
    for car in manifest.cars:
        for noise in NoiseClass:
            for hp in HP_FREQS:
                s = np.array([condition_snr(Condition(MicProfile(hp, lp), car, noise), manifest)
                              for lp in LP_FREQS[1:]])
                spread = max(spread, float(np.max(s.max(axis=0) - s.min(axis=0))))
    # In-band speech energy loss of the noise-free stimulus through HP2 (full band LP2).
    energy = float(np.sum(stim ** 2))
    loss = {hp: -10 * math.log10(np.sum(apply_cascade(MicProfile(hp, 20000).cascade(FS),
                                                      AudioBuffer(stim, FS)).samples ** 2) / energy)
            for hp in (100, 350)}
    ok = above < 1e-6 and spread < 0.5 and loss[350] - loss[100] >= 1.0
    criterion(7, ok, f"energy above 3.5 kHz {above:.1e}; LP2 SNR spread {spread:.3f} dB (< 0.5); "
                     f"HP2 loss 100 Hz {loss[100]:.2f} dB, 350 Hz {loss[350]:.2f} dB (diff >= 1)")
    assert ok


def _end_to_end(root, workers):
    assert cli_main(["synth", "--ci", "--seed", "11", "--out", str(root)]) == 0
    manifest = str(root / "manifest.json")
    assert cli_main(["sweep", "--manifest", manifest, "--workers", str(workers)]) == 0
    assert cli_main(["report", "--manifest", manifest]) == 0
    results = root / "results"
    return {p.relative_to(results).as_posix(): p.read_bytes() for p in sorted(results.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(criterion, tmp_path):
    a = _end_to_end(tmp_path / "a", workers=1)
    b = _end_to_end(tmp_path / "b", workers=1)
    c = _end_to_end(tmp_path / "c", workers=2)
    svgs = [k for k in a if k.endswith(".svg")]
    ok = a == b == c and "dataset.csv" in a and "report/index.txt" in a and len(svgs) >= 1
    criterion(8, ok, f"{len(a)} files ({len(svgs)} SVG) byte-identical across 2 runs and workers 1 vs 2")
    assert ok
