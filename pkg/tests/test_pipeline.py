import json
import math

import numpy as np
import pytest

from micsweep.audio_io import AudioBuffer, ImpulseResponse
from micsweep.dataset import read_dataset, write_dataset
from micsweep.dsp import apply_cascade, convolve
from micsweep.fixtures import DEFAULT_CARS, NoiseClass, StimulusLayout, synth_noise, synth_stimulus
from micsweep.metrics import segment, snr_a_weighted
from micsweep.pipeline import (DEFAULT_SELECTION_SIZE, Manifest, MicProfile,
                               default_manifest_dict, default_selection, default_selection_path, full_grid, load_manifest,
                               render_condition, run_sweep, select_profiles, tile_noise,
                               write_synthetic_fixtures)

FS = 48000
SMALL = StimulusLayout(sentence_count=2, sentence_seconds=2.0, lead_silence_s=0.5, trail_silence_s=0.5)
REFS = ["the birch canoe slid", "glue the sheet"]


def small_manifest(noise_scale=1.0, ir=None, stim_scale=1.0, noise=None, profiles=None, seed=3):
    stim = synth_stimulus(SMALL, seed=seed, sample_rate=FS)
    stim = AudioBuffer(stim.samples * stim_scale, FS)
    if noise is None:
        noise = synth_noise(NoiseClass.CITY, 1.5, seed=seed, sample_rate=FS)
    noise = AudioBuffer(noise.samples * noise_scale, FS)
    ir = ImpulseResponse(np.array([1.0]), FS, label="delta") if ir is None else ir
    return Manifest(stim, {"car": ir}, {("car", NoiseClass.CITY): noise},
                    profiles or [MicProfile(100, 8000)], SMALL, REFS, FS)


def test_grid_counts_and_ids():
    g = full_grid()
    assert len(g) == 225
    assert len(full_grid(include_no_peak=True)) == 240
    assert len({p.id for p in full_grid(include_no_peak=True)}) == 240
    assert all(p.has_peak for p in g)


def test_default_selection_file_matches_heuristic():
    grid = full_grid(include_no_peak=True)
    from_file = select_profiles(grid, default_selection_path())
    assert len(from_file) == DEFAULT_SELECTION_SIZE
    assert from_file == default_selection()


def test_selection_identity_and_tuple_form(tmp_path):
    grid = full_grid(include_no_peak=True)
    f = tmp_path / "all.txt"
    f.write_text("\n".join(p.id for p in reversed(grid)))
    assert select_profiles(grid, f) == grid
    f.write_text("# comment\n100, 8000, 13000, 2\n350,4000,-1,-1  # flat\n")
    assert [p.id for p in select_profiles(grid, f)] == ["hp100_lp8000_pk13000_q2", "hp350_lp4000_flat"]


@pytest.mark.parametrize("text", ["", "# only comments\n", "hp20_lp4000_pk999_q2\n",
                                  "hp20_lp4000_flat\nhp20_lp4000_flat\n", "20,4000,4000\n"])
def test_selection_rejections(tmp_path, text):
    f = tmp_path / "sel.txt"
    f.write_text(text)
    with pytest.raises(ValueError):
        select_profiles(full_grid(include_no_peak=True), f)


def test_profile_validation():
    with pytest.raises(ValueError):
        MicProfile(8000, 4000)
    with pytest.raises(ValueError):
        MicProfile(20, 4000, 4000, None)


def test_render_silent_noise_delta_ir_is_filtered_stimulus():
    m = small_manifest(noise_scale=0.0)
    cond = m.conditions()[0]
    got = render_condition(cond, m)
    expected = apply_cascade(cond.mic.cascade(FS), m.stimulus)
    # Only FFT rounding from the delta convolution separates the two.
    np.testing.assert_allclose(got.samples, expected.samples, rtol=0, atol=1e-12)


def test_render_silent_stimulus_is_filtered_tiled_noise():
    m = small_manifest(stim_scale=0.0)
    cond = m.conditions()[0]
    got = render_condition(cond, m)
    n = len(m.stimulus)
    tiled = np.concatenate([m.noises[("car", NoiseClass.CITY)].samples] * 4)[:n]
    expected = apply_cascade(cond.mic.cascade(FS), AudioBuffer(tiled, FS))
    np.testing.assert_array_equal(got.samples, expected.samples)


def test_render_is_compositional():
    rng = np.random.default_rng(9)
    tail = rng.normal(size=4000) * np.exp(-np.arange(4000) / 600.0) * 0.05
    ir = ImpulseResponse(np.concatenate([[1.0], tail]), FS, label="r")
    m = small_manifest(ir=ir, profiles=[MicProfile(20, 12000, 6000, 2.0)])
    cond = m.conditions()[0]
    n = len(m.stimulus)
    speech = convolve(m.stimulus, ir).samples[:n]
    noise = tile_noise(m.noises[("car", NoiseClass.CITY)], n)
    expected = apply_cascade(cond.mic.cascade(FS), AudioBuffer(speech + noise, FS))
    np.testing.assert_allclose(render_condition(cond, m).samples, expected.samples, rtol=0, atol=1e-9)


def test_doubling_noise_lowers_snr_by_6db():
    base = small_manifest(noise_scale=0.05)
    louder = small_manifest(noise_scale=0.10)
    cond = base.conditions()[0]
    a = [snr_a_weighted(s) for s in segment(render_condition(cond, base), SMALL)]
    b = [snr_a_weighted(s) for s in segment(render_condition(cond, louder), SMALL)]
    for x, y in zip(a, b):
        # Speech 20+ dB above noise, so the power subtraction is well conditioned.
        assert x > 20
        assert x - y == pytest.approx(20 * math.log10(2), abs=0.1)


def test_short_noise_rejected():
    short = AudioBuffer(np.zeros(FS - 1), FS)
    m = small_manifest(noise=short)
    with pytest.raises(ValueError, match="shorter than 1 s"):
        render_condition(m.conditions()[0], m)


def test_rate_mismatch_rejected():
    stim = synth_stimulus(SMALL, seed=0, sample_rate=FS)
    ir = ImpulseResponse(np.array([1.0]), 44100, label="x")
    noise = synth_noise(NoiseClass.IDLE, 1.5, seed=0, sample_rate=FS)
    with pytest.raises(ValueError, match="sample rates"):
        Manifest(stim, {"car": ir}, {("car", NoiseClass.IDLE): noise}, [MicProfile(20, 4000)], SMALL, REFS, FS)


def test_condition_order_and_ids(ci_manifest):
    conds = ci_manifest.conditions()
    assert len(conds) == 15
    assert [c.noise for c in conds[::5]] == list(NoiseClass)
    assert conds[0].id == "sedan-idle-hp20_lp4000_flat"
    assert len({c.id for c in conds}) == 15


def test_sweep_worker_count_does_not_change_output(tmp_path):
    m = small_manifest(profiles=[MicProfile(20, 4000), MicProfile(350, 16000, 13000, 4.0),
                                 MicProfile(100, 8000, 6000, 1.414)])
    serial = run_sweep(m, workers=1)
    parallel = run_sweep(m, workers=2)
    write_dataset(serial, tmp_path / "a.csv")
    write_dataset(parallel, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(serial) == 3 * SMALL.sentence_count
    assert read_dataset(tmp_path / "a.csv") == serial


def test_fixture_round_trip(tmp_path):
    sel = [MicProfile(20, 4000), MicProfile(100, 8000, 8000, 2.0)]
    path = write_synthetic_fixtures(tmp_path, seed=4, cars=DEFAULT_CARS[:1],
                                    selection=sel)
    spec = json.loads(path.read_text())
    assert spec["stimulus"] == {"path": "fixtures/stimulus.wav"}
    from_files = load_manifest(path)
    from_synth = load_manifest(default_manifest_dict(seed=4, cars=DEFAULT_CARS[:1]))
    assert from_files.profiles == sel
    # float32 fixtures: agree with the in-memory synthesis to float32 precision.
    np.testing.assert_allclose(from_files.stimulus.samples, from_synth.stimulus.samples, atol=1e-7)
    for key, noise in from_synth.noises.items():
        np.testing.assert_allclose(from_files.noises[key].samples, noise.samples, atol=1e-7)
    np.testing.assert_allclose(from_files.irs["sedan"].samples, from_synth.irs["sedan"].samples, atol=1e-7)
    assert from_files.output_dir == tmp_path / "results"


def test_seed_override_changes_synthesis(tmp_path):
    spec = {"stimulus": {"synth": {}}, "cars": [{"id": "c", "ir": {"synth": {"rt60": 0.05,
            "direct_to_reverb_db": 3}}}], "noises": [{"car": "c", "class": "idle", "synth": {"duration_s": 2}}],
            "layout": {"sentence_count": 2, "sentence_seconds": 2.0, "lead_silence_s": 0.5,
                       "trail_silence_s": 0.5}, "selection": str(default_selection_path())}
    (tmp_path / "refs.txt").write_text("\n".join(REFS))
    spec["references"] = str(tmp_path / "refs.txt")
    a, b, c = load_manifest({**spec, "seed": 1}), load_manifest({**spec, "seed": 1}), load_manifest(spec, seed=2)
    assert np.array_equal(a.noises[("c", NoiseClass.IDLE)].samples, b.noises[("c", NoiseClass.IDLE)].samples)
    assert not np.array_equal(a.noises[("c", NoiseClass.IDLE)].samples, c.noises[("c", NoiseClass.IDLE)].samples)
    assert a.digest == b.digest != c.digest
