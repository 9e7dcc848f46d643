"""Desk-scale synthetic data: pseudo-speech and noise generators, SNR mixing,
aligned clip sampling, WAV and manifest I/O.

The generators replace a large recorded corpus for development and testing;
manifests use the same record shape an ingestion of real data would, so
swapping in recorded audio is a path change only.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import DEFAULT_SAMPLE_RATE, StftParams, Waveform, magnitude, stft

NOISE_KINDS = ("white", "pink", "babble")

SNR_DB_MIN = -5.0
SNR_DB_MAX = 25.0
SNR_GRID_DB = np.arange(-5.0, 26.0, 1.0)  # 31 uniform levels


@dataclass(frozen=True)
class MixtureSpec:
    """Recipe for one synthetic noisy/clean pair."""

    snr_db: float
    clip_seconds: float = 10.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: int = 0
    noise_kind: str = "white"

    def __post_init__(self):
        if not (SNR_DB_MIN <= self.snr_db <= SNR_DB_MAX):
            raise ValueError(
                f"snr_db {self.snr_db} outside [{SNR_DB_MIN}, {SNR_DB_MAX}]"
            )
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")


def synth_clean(
    duration: float, seed: int, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> Waveform:
    """Harmonic pseudo-speech: drifting f0, a few harmonics, syllabic envelope.

    Deterministic per seed; peak amplitude <= 0.9; spectral energy sits well
    below 4 kHz (at most 8 harmonics of an 80-300 Hz fundamental).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = round(duration * sample_rate)
    t = np.arange(n) / sample_rate

    # fundamental drifts between random control points every ~250 ms
    n_ctrl = max(2, int(duration * 4) + 1)
    ctrl_times = np.linspace(0.0, duration, n_ctrl)
    ctrl_f0 = rng.uniform(80.0, 300.0, size=n_ctrl)
    f0 = np.interp(t, ctrl_times, ctrl_f0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    n_harm = int(rng.integers(3, 9))
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        amp = rng.uniform(0.5, 1.0) / h
        x += amp * np.sin(h * phase + rng.uniform(0.0, 2.0 * np.pi))

    # syllable-rate amplitude modulation with a small voicing floor
    syl_rate = rng.uniform(2.0, 5.0)
    env = np.sin(np.pi * syl_rate * t + rng.uniform(0.0, np.pi)) ** 2
    x *= 0.1 + 0.9 * env

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= rng.uniform(0.5, 1.0) * 0.9 / peak
    return Waveform(samples=x, sample_rate=sample_rate)


def _white(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def _pink(rng: np.random.Generator, n: int) -> np.ndarray:
    # shape white noise by 1/sqrt(f) in the frequency domain (-3 dB/octave power)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n)
    spec[1:] /= np.sqrt(freqs[1:])
    spec[0] = 0.0
    return np.fft.irfft(spec, n=n)


def synth_noise(
    duration: float,
    seed: int,
    kind: str = "white",
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Deterministic noise: white, pink, or babble (6 detuned voices)."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    n = round(duration * sample_rate)

    if kind == "white":
        x = _white(rng, n)
    elif kind == "pink":
        x = _pink(rng, n)
    else:
        voice_seeds = rng.integers(0, 2**31 - 1, size=6)
        x = np.zeros(n)
        for vs in voice_seeds:
            x += synth_clean(duration, int(vs), sample_rate).samples

    rms = np.sqrt(np.mean(x**2))
    x *= 0.1 / rms
    return Waveform(samples=x, sample_rate=sample_rate)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """clean + alpha * noise with alpha chosen to hit the requested SNR."""
    if len(clean) != len(noise):
        raise ValueError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch between clean and noise")
    p_clean = np.mean(clean.samples**2)
    if p_clean == 0:
        raise ValueError("silent clean signal; SNR undefined")
    p_noise = np.mean(noise.samples**2)
    if p_noise == 0:
        raise ValueError("silent noise signal; SNR undefined")
    alpha = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(
        samples=clean.samples + alpha * noise.samples, sample_rate=clean.sample_rate
    )


def measure_snr_db(clean: Waveform, noisy: Waveform) -> float:
    """SNR of noisy = clean + residual, measured over the full clips."""
    residual = noisy.samples - clean.samples
    p_res = np.mean(residual**2)
    if p_res == 0:
        return np.inf
    return 10.0 * np.log10(np.mean(clean.samples**2) / p_res)


@dataclass
class AlignedClip:
    clean: Waveform
    noisy: Waveform
    clean_spec: "object"
    noisy_spec: "object"
    start: int


def sample_aligned_clip(
    clean: Waveform,
    noisy: Waveform,
    clip_seconds: float,
    stft_params: StftParams,
    seed: int,
) -> AlignedClip:
    """Random clip whose start is a hop multiple, with matching spectrograms.

    Hop alignment makes the clip's spectrogram frames coincide with frames of
    the full signal's spectrogram.
    """
    if len(clean) != len(noisy):
        raise ValueError("clean and noisy lengths differ")
    n_clip = round(clip_seconds * clean.sample_rate)
    if n_clip > len(clean):
        raise ValueError(
            f"source too short: {len(clean)} samples < clip of {n_clip}"
        )
    rng = np.random.default_rng(seed)
    hop = stft_params.hop
    start = hop * int(rng.integers(0, (len(clean) - n_clip) // hop + 1))

    clean_clip = Waveform(clean.samples[start : start + n_clip], clean.sample_rate)
    noisy_clip = Waveform(noisy.samples[start : start + n_clip], noisy.sample_rate)
    return AlignedClip(
        clean=clean_clip,
        noisy=noisy_clip,
        clean_spec=magnitude(stft(clean_clip, stft_params)),
        noisy_spec=magnitude(stft(noisy_clip, stft_params)),
        start=start,
    )


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write mono WAV; samples are clamped to [-1, 1] at this point only."""
    x = np.clip(w.samples, -1.0, 1.0)
    if fmt == "float32":
        wavfile.write(path, w.sample_rate, x.astype(np.float32))
    elif fmt == "pcm16":
        wavfile.write(path, w.sample_rate, np.round(x * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unsupported format {fmt!r}; use 'float32' or 'pcm16'")


def read_wav(path) -> Waveform:
    """Read mono 16-bit PCM or 32-bit float WAV."""
    try:
        rate, data = wavfile.read(path)
    except Exception as e:
        raise ValueError(f"cannot read WAV {path}: {e}") from e
    if data.ndim != 1:
        raise ValueError(f"expected mono WAV, got {data.ndim} channels in {path}")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32767.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    return Waveform(samples=x, sample_rate=int(rate))


@dataclass
class ManifestRecord:
    clean_path: str
    noise_path: str
    noisy_path: str
    snr_db: float
    duration: float


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(asdict(rec)) + "\n")


def read_manifest(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ManifestRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise ValueError(f"bad manifest line {line_no} in {path}: {e}") from e
    return records


def validate_manifest(path) -> list:
    """Load records and check that files exist and share one sample rate."""
    records = read_manifest(path)
    base = Path(path).parent
    rates = set()
    for rec in records:
        for key in ("clean_path", "noisy_path"):
            p = base / getattr(rec, key)
            if not p.exists():
                raise FileNotFoundError(f"manifest references missing file {p}")
            rates.add(read_wav(p).sample_rate)
    if len(rates) > 1:
        raise ValueError(f"manifest mixes sample rates: {sorted(rates)}")
    return records


def generate_dataset(
    out_dir,
    n_clips: int,
    clip_seconds: float = 10.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
    noise_kinds=NOISE_KINDS,
    snr_grid_db=None,
) -> Path:
    """Synthesize a clean/noise/noisy corpus and write its manifest.

    SNRs are drawn from the 31-level 1 dB grid spanning -5..25 dB unless a
    custom grid is given. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    grid = SNR_GRID_DB if snr_grid_db is None else np.asarray(snr_grid_db, dtype=float)

    records = []
    for i in range(n_clips):
        snr_db = float(rng.choice(grid))
        kind = str(rng.choice(list(noise_kinds)))
        clean = synth_clean(clip_seconds, seed=int(rng.integers(2**31 - 1)), sample_rate=sample_rate)
        noise = synth_noise(clip_seconds, seed=int(rng.integers(2**31 - 1)), kind=kind, sample_rate=sample_rate)
        noisy = mix_at_snr(clean, noise, snr_db)

        # keep the mixture inside [-1, 1] so the files are written unclipped;
        # scaling the whole triple preserves the SNR and additivity
        peak = np.max(np.abs(noisy.samples))
        if peak > 0.99:
            g = 0.99 / peak
            clean = Waveform(clean.samples * g, sample_rate)
            noise = Waveform(noise.samples * g, sample_rate)
            noisy = Waveform(noisy.samples * g, sample_rate)

        names = {
            "clean_path": f"clean_{i:05d}.wav",
            "noise_path": f"noise_{i:05d}.wav",
            "noisy_path": f"noisy_{i:05d}.wav",
        }
        write_wav(out_dir / names["clean_path"], clean)
        write_wav(out_dir / names["noise_path"], noise)
        write_wav(out_dir / names["noisy_path"], noisy)
        records.append(
            ManifestRecord(
                **names, snr_db=snr_db, duration=len(clean) / sample_rate
            )
        )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    return manifest_path
