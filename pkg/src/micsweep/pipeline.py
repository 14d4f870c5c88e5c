"""Microphone FR grid, manifest loading, condition rendering and the parallel sweep.

A rendered condition is

    x = f(trim(s * h) + tile(v))

with s the stimulus, h the car impulse response, v the car's driving
noise and f the microphone cascade HP2 -> LP2 -> PK2.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio_io import CANONICAL_RATE, AudioBuffer, ImpulseResponse, read_wav, write_wav
from .dataset import DatasetRow
from .dsp import (BUTTERWORTH_Q, FilterCascade, FilterKind, FilterSpec, apply_cascade,
                  design_biquad, fft_convolve)
from .fixtures import (DEFAULT_CARS, DEFAULT_IR_SECONDS, DEFAULT_NOISE_SECONDS, CarModel,
                       NoiseClass, StimulusLayout, synth_impulse_response, synth_noise,
                       synth_stimulus)
from .metrics import SNR_METRIC, segment, snr_a_weighted

log = logging.getLogger(__name__)

HP_FREQS = (20, 100, 350)
LP_FREQS = (4000, 8000, 12000, 16000, 20000)
PEAK_FREQS = (4000, 6000, 8000, 13000, 16000)
PEAK_QS = (1.414, 2.0, 4.0)
PEAK_GAIN_DB = 20.0
DEFAULT_SELECTION_SIZE = 113
NO_PEAK = -1


@dataclass(frozen=True)
class MicProfile:
    hp_fc: int
    lp_fc: int
    peak_fc: int | None = None
    peak_q: float | None = None
    peak_gain_db: float = PEAK_GAIN_DB

    def __post_init__(self):
        if not 0 < self.hp_fc < self.lp_fc:
            raise ValueError(f"need 0 < hp_fc < lp_fc, got {self.hp_fc}, {self.lp_fc}")
        if (self.peak_fc is None) != (self.peak_q is None):
            raise ValueError("peak_fc and peak_q must be given together")
        if self.peak_fc is not None and not self.peak_fc > self.hp_fc:
            raise ValueError(f"peak_fc {self.peak_fc} must exceed hp_fc {self.hp_fc}")

    @property
    def has_peak(self) -> bool:
        return self.peak_fc is not None

    @property
    def id(self) -> str:
        base = f"hp{self.hp_fc}_lp{self.lp_fc}"
        if not self.has_peak:
            return base + "_flat"
        out = f"{base}_pk{self.peak_fc}_q{self.peak_q:g}"
        if self.peak_gain_db != PEAK_GAIN_DB:
            out += f"_g{self.peak_gain_db:g}"
        return out

    def filter_specs(self) -> list[FilterSpec]:
        specs = [FilterSpec(FilterKind.HIGH_PASS2, self.hp_fc, BUTTERWORTH_Q),
                 FilterSpec(FilterKind.LOW_PASS2, self.lp_fc, BUTTERWORTH_Q)]
        if self.has_peak:
            specs.append(FilterSpec(FilterKind.PEAK2, self.peak_fc, self.peak_q, self.peak_gain_db))
        return specs

    def cascade(self, sample_rate: int) -> FilterCascade:
        return FilterCascade([design_biquad(s, sample_rate) for s in self.filter_specs()])


def full_grid(include_no_peak: bool = False) -> list[MicProfile]:
    """Every hp x lp x peak combination in canonical order (hp, lp, peak fc, q ascending).

    With ``include_no_peak`` the flat profile follows the peaked ones of each (hp, lp).
    """
    out = []
    for hp in HP_FREQS:
        for lp in LP_FREQS:
            for fc in PEAK_FREQS:
                for q in PEAK_QS:
                    out.append(MicProfile(hp, lp, fc, q))
            if include_no_peak:
                out.append(MicProfile(hp, lp))
    return out


def default_selection(grid: Sequence[MicProfile] | None = None) -> list[MicProfile]:
    """Placeholder 113-profile selection.

    All flat (hp, lp) combinations, plus peaked profiles whose peak lies
    above hp_fc and below 1.25 * lp_fc, taken in grid order until the
    total reaches 113. Returned in grid order.
    """
    grid = full_grid(include_no_peak=True) if grid is None else list(grid)
    flat = [p for p in grid if not p.has_peak]
    peaked = [p for p in grid if p.has_peak and p.hp_fc < p.peak_fc < 1.25 * p.lp_fc]
    chosen = set(flat) | set(peaked[:DEFAULT_SELECTION_SIZE - len(flat)])
    return [p for p in grid if p in chosen]


def default_selection_path():
    return resources.files("micsweep") / "data" / "default_selection.txt"


def _parse_selection_line(line: str) -> str:
    if "," not in line:
        return line
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 4:
        raise ValueError(f"selection tuple needs hp,lp,peak_fc,peak_q: {line!r}")
    hp, lp, fc = (int(float(p)) for p in parts[:3])
    q = float(parts[3])
    if fc == NO_PEAK:
        return MicProfile(hp, lp).id
    return MicProfile(hp, lp, fc, q).id


def select_profiles(grid: Sequence[MicProfile], selection_file) -> list[MicProfile]:
    """Subset of ``grid`` named by a selection file, in grid order.

    One entry per line: a profile id (``hp100_lp8000_pk13000_q2``) or a
    tuple ``hp,lp,peak_fc,peak_q`` with ``-1,-1`` for no peak. ``#`` starts
    a comment.
    """
    by_id = {p.id: p for p in grid}
    wanted, seen = [], set()
    if not hasattr(selection_file, "read_text"):
        selection_file = Path(selection_file)
    text = selection_file.read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        pid = _parse_selection_line(line)
        if pid not in by_id:
            raise ValueError(f"selection line {lineno}: unknown profile {line!r}")
        if pid in seen:
            raise ValueError(f"selection line {lineno}: duplicate profile {pid}")
        seen.add(pid)
        wanted.append(pid)
    if not wanted:
        raise ValueError("selection file lists no profiles")
    return [p for p in grid if p.id in seen]


def write_selection(profiles: Iterable[MicProfile], path, header: str = "") -> None:
    lines = [f"# {h}" for h in header.splitlines()] + [p.id for p in profiles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Condition:
    mic: MicProfile
    car: str
    noise: NoiseClass

    @property
    def id(self) -> str:
        return f"{self.car}-{self.noise.value}-{self.mic.id}"


def _harvard_references() -> list[str]:
    text = (resources.files("micsweep") / "data" / "references.txt").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass
class Manifest:
    """Loaded experiment inputs: stimulus, per-car IRs and noises, profile selection."""

    stimulus: AudioBuffer
    irs: dict[str, ImpulseResponse]
    noises: dict[tuple[str, NoiseClass], AudioBuffer]
    profiles: list[MicProfile]
    layout: StimulusLayout = field(default_factory=StimulusLayout)
    references: list[str] = field(default_factory=_harvard_references)
    sample_rate: int = CANONICAL_RATE
    output_dir: Path = Path("out")
    digest: str = ""
    _speech_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        rates = {self.stimulus.sample_rate, *(h.sample_rate for h in self.irs.values()),
                 *(v.sample_rate for v in self.noises.values())}
        if rates != {self.sample_rate}:
            raise ValueError(f"inconsistent sample rates {sorted(rates)}, manifest says {self.sample_rate}")
        n = self.layout.total_samples(self.sample_rate)
        if len(self.stimulus) != n:
            raise ValueError(f"stimulus has {len(self.stimulus)} samples, layout needs {n}")
        if len(self.references) != self.layout.sentence_count:
            raise ValueError(f"{len(self.references)} reference sentences for {self.layout.sentence_count} sentences")
        for car, _ in self.noises:
            if car not in self.irs:
                raise ValueError(f"noise given for unknown car {car!r}")
        if not self.profiles:
            raise ValueError("manifest selects no microphone profiles")

    @property
    def cars(self) -> list[str]:
        return list(self.irs)

    def conditions(self) -> list[Condition]:
        """Canonical order: car, then noise class, then profile in grid order."""
        out = []
        for car in self.irs:
            for noise in NoiseClass:
                if (car, noise) in self.noises:
                    out.extend(Condition(mic, car, noise) for mic in self.profiles)
        return out

    def reverberant_speech(self, car: str) -> np.ndarray:
        """s * h trimmed to the stimulus length, cached per car."""
        if car not in self._speech_cache:
            full = fft_convolve(self.stimulus.samples, self.irs[car].samples)
            self._speech_cache[car] = full[:len(self.stimulus)]
        return self._speech_cache[car]


def tile_noise(noise: AudioBuffer, n: int) -> np.ndarray:
    """Loop ``noise`` from sample 0 (no crossfade) to exactly ``n`` samples."""
    if len(noise) < noise.sample_rate:
        raise ValueError(f"noise is {len(noise)} samples, shorter than 1 s; refusing to tile")
    reps = -(-n // len(noise))
    return np.tile(noise.samples, reps)[:n]


def render_condition(cond: Condition, manifest: Manifest) -> AudioBuffer:
    """Render one condition; no level normalisation anywhere in the chain."""
    fs = manifest.sample_rate
    noise = manifest.noises[(cond.car, cond.noise)]
    speech = manifest.reverberant_speech(cond.car)
    mixed = AudioBuffer(speech + tile_noise(noise, speech.size), fs)
    return apply_cascade(cond.mic.cascade(fs), mixed)


def condition_snr(cond: Condition, manifest: Manifest) -> list[float]:
    x = render_condition(cond, manifest)
    return [snr_a_weighted(sl) for sl in segment(x, manifest.layout)]


# Worker-process state for run_sweep; set once per process by the pool initializer.
_WORKER: dict = {}


def _init_worker(manifest: Manifest, render_dir: str | None) -> None:
    _WORKER["manifest"] = manifest
    _WORKER["render_dir"] = render_dir


def _sweep_one(cond: Condition) -> list[float]:
    manifest = _WORKER["manifest"]
    render_dir = _WORKER["render_dir"]
    try:
        x = render_condition(cond, manifest)
        if render_dir is not None:
            write_wav(Path(render_dir) / f"{cond.id}.wav", x, "float32")
        return [snr_a_weighted(sl) for sl in segment(x, manifest.layout)]
    except Exception as exc:
        raise RuntimeError(f"condition {cond.id} failed: {exc}") from exc


def run_sweep(manifest: Manifest, workers: int = 1, render_dir=None) -> list[DatasetRow]:
    """Render every condition and compute per-sentence A-weighted SNR.

    Row order is canonical (condition order, then sentence) whatever the
    worker count.
    """
    conds = manifest.conditions()
    if render_dir is not None:
        Path(render_dir).mkdir(parents=True, exist_ok=True)
        render_dir = str(render_dir)
    if workers <= 1:
        _init_worker(manifest, render_dir)
        try:
            results = [_sweep_one(c) for c in conds]
        finally:
            _WORKER.clear()
    else:
        # Contiguous chunks keep one car per worker most of the time, so the
        # cached s * h is reused.
        chunk = max(1, len(conds) // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(manifest, render_dir)) as pool:
            results = list(pool.map(_sweep_one, conds, chunksize=chunk))
    rows = []
    for cond, snrs in zip(conds, results):
        rows.extend(DatasetRow.for_condition(cond, i, SNR_METRIC, v) for i, v in enumerate(snrs))
    return rows


# ---------------------------------------------------------------- manifests


def manifest_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def default_manifest_dict(seed: int = 0, output_dir: str = "out",
                          cars: Sequence[CarModel] = DEFAULT_CARS,
                          noises: Sequence[NoiseClass] = tuple(NoiseClass),
                          selection: str = "default") -> dict:
    """An all-synthetic manifest: 3 cars x 3 noise classes x default 113 profiles."""
    return {
        "sample_rate": CANONICAL_RATE,
        "seed": seed,
        "output_dir": output_dir,
        "layout": {"sentence_count": 20, "sentence_seconds": 4.0,
                   "lead_silence_s": 1.0, "trail_silence_s": 1.0},
        "stimulus": {"synth": {}},
        "cars": [{"id": c.id, "ir": {"synth": {"rt60": c.rt60, "direct_to_reverb_db": c.direct_to_reverb_db,
                                                "length_s": DEFAULT_IR_SECONDS}}} for c in cars],
        "noises": [{"car": c.id, "class": n.value,
                    "synth": {"level_dbfs": n.default_level_dbfs, "duration_s": DEFAULT_NOISE_SECONDS}}
                   for c in cars for n in noises],
        "selection": selection,
    }


def load_manifest(source, seed: int | None = None) -> Manifest:
    """Build a Manifest from a JSON file path or an already-parsed dict.

    Relative paths resolve against the manifest file's directory. A
    ``seed`` argument overrides the manifest's own seed for synthesized
    inputs.
    """
    if isinstance(source, dict):
        spec, base = source, Path.cwd()
    else:
        path = Path(source)
        spec, base = json.loads(path.read_text(encoding="utf-8")), path.parent
    if seed is not None:
        spec = {**spec, "seed": seed}
    fs = int(spec.get("sample_rate", CANONICAL_RATE))
    seed_ = int(spec.get("seed", 0))
    layout = StimulusLayout(**spec.get("layout", {}))

    stim = spec["stimulus"]
    if "path" in stim:
        stimulus = read_wav(_resolve(base, stim["path"]), expected_rate=fs)
    else:
        stimulus = synth_stimulus(layout, seed=seed_, sample_rate=fs)

    irs = {}
    for i, car in enumerate(spec["cars"]):
        cid, ir = car["id"], car["ir"]
        if cid in irs:
            raise ValueError(f"duplicate car id {cid!r}")
        if "path" in ir:
            buf = read_wav(_resolve(base, ir["path"]), expected_rate=fs)
            irs[cid] = ImpulseResponse(buf.samples, fs, label=cid)
        else:
            s = ir["synth"]
            model = CarModel(cid, float(s["rt60"]), float(s["direct_to_reverb_db"]))
            irs[cid] = synth_impulse_response(model, float(s.get("length_s", DEFAULT_IR_SECONDS)),
                                              seed=seed_, sample_rate=fs)

    noises = {}
    car_index = {cid: i for i, cid in enumerate(irs)}
    for entry in spec["noises"]:
        car, cls = entry["car"], NoiseClass(entry["class"])
        if car not in irs:
            raise ValueError(f"noise entry for unknown car {car!r}")
        if (car, cls) in noises:
            raise ValueError(f"duplicate noise entry for {car}/{cls.value}")
        if "path" in entry:
            noises[(car, cls)] = read_wav(_resolve(base, entry["path"]), expected_rate=fs)
        else:
            s = entry.get("synth", {})
            noises[(car, cls)] = synth_noise(cls, float(s.get("duration_s", DEFAULT_NOISE_SECONDS)),
                                             seed=seed_, sample_rate=fs, level_dbfs=s.get("level_dbfs"),
                                             stream=car_index[car])

    sel = spec.get("selection", "default")
    grid = full_grid(include_no_peak=True)
    if sel == "default":
        profiles = select_profiles(grid, default_selection_path())
    else:
        profiles = select_profiles(grid, _resolve(base, sel))

    refs = spec.get("references")
    references = _harvard_references() if refs is None else \
        [ln.strip() for ln in _resolve(base, refs).read_text(encoding="utf-8").splitlines() if ln.strip()]

    out_dir = _resolve(base, spec.get("output_dir", "out"))
    return Manifest(stimulus, irs, noises, profiles, layout, references, fs, out_dir, manifest_digest(spec))


def write_synthetic_fixtures(out_dir, seed: int = 0, cars: Sequence[CarModel] = DEFAULT_CARS,
                             noises: Sequence[NoiseClass] = tuple(NoiseClass),
                             selection: Sequence[MicProfile] | None = None) -> Path:
    """Write fixture WAVs, a selection file and a manifest referencing them; return the manifest path."""
    out = Path(out_dir)
    (out / "fixtures").mkdir(parents=True, exist_ok=True)
    synth = load_manifest(default_manifest_dict(seed=seed, cars=cars, noises=noises))
    write_wav(out / "fixtures" / "stimulus.wav", synth.stimulus, "float32")
    spec = default_manifest_dict(seed=seed, cars=cars, noises=noises, output_dir="results")
    spec["stimulus"] = {"path": "fixtures/stimulus.wav"}
    for car in spec["cars"]:
        rel = f"fixtures/ir_{car['id']}.wav"
        write_wav(out / rel, synth.irs[car["id"]], "float32")
        car["ir"] = {"path": rel}
    for entry in spec["noises"]:
        rel = f"fixtures/noise_{entry['car']}_{entry['class']}.wav"
        write_wav(out / rel, synth.noises[(entry["car"], NoiseClass(entry["class"]))], "float32")
        entry.pop("synth")
        entry["path"] = rel
    profiles = synth.profiles if selection is None else list(selection)
    write_selection(profiles, out / "selection.txt", f"{len(profiles)} microphone profiles")
    spec["selection"] = "selection.txt"
    (out / "references.txt").write_text("\n".join(synth.references) + "\n", encoding="utf-8")
    spec["references"] = "references.txt"
    path = out / "manifest.json"
    path.write_text(json.dumps(spec, indent=2) + "\n", encoding="utf-8")
    return path


def cpu_workers(requested: int | None) -> int:
    return requested if requested and requested > 0 else (os.cpu_count() or 1)
