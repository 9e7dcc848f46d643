"""Objective metrics, paired significance testing, and RTF benchmarking.

SI-SDR and log-spectral distance are the in-repo proxy metrics; perceptual
metrics (PESQ, STOI, ...) are consumed through an external-command adapter
so existing tools can be plugged in without reimplementing them here.
"""

import hashlib
import json
import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .dsp import StftParams, Waveform, magnitude, stft
from .modules import magnitude_stft

SI_SDR_CAP_DB = 60.0
LSD_EPS = 1e-10  # floor on squared magnitudes inside the log


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def si_sdr(reference, estimate, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant SDR in dB with optimal scaling projection.

    Values are clipped to [-cap_db, cap_db]; a perfect (any positively
    scaled) estimate returns +cap_db exactly.
    """
    ref = _samples(reference)
    est = _samples(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("silent reference; SI-SDR undefined")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    err = est - target
    target_energy = np.dot(target, target)
    err_energy = np.dot(err, err)
    if err_energy == 0:
        return cap_db
    if target_energy == 0:
        return -cap_db
    return float(np.clip(10.0 * np.log10(target_energy / err_energy), -cap_db, cap_db))


def lsd(reference, estimate, p: StftParams) -> float:
    """Log-spectral distance: per-frame RMS over bins of the dB difference
    of squared magnitudes, averaged over frames."""
    ref = _samples(reference)
    est = _samples(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    sr = 16000 if not isinstance(reference, Waveform) else reference.sample_rate
    s_ref = magnitude(stft(Waveform(ref, sr), p)).values
    s_est = magnitude(stft(Waveform(est, sr), p)).values
    d = 10.0 * (
        np.log10(np.maximum(s_ref**2, LSD_EPS))
        - np.log10(np.maximum(s_est**2, LSD_EPS))
    )
    return float(np.mean(np.sqrt(np.mean(d**2, axis=0))))


@dataclass
class WilcoxonResult:
    p_value: float
    statistic: float  # W+, the positive-rank sum
    n_effective: int
    mode: str


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p over all 2^n sign assignments (DP over rank sums).

    Ranks may be average ranks (half-integers); everything is doubled so the
    distribution lives on integers.
    """
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    max_sum = int(r2.sum())
    counts = np.zeros(max_sum + 1)
    counts[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: max_sum + 1 - r]
        counts = counts + shifted
    total = counts.sum()  # 2^n
    w2 = int(np.rint(2.0 * w_plus))
    p_low = counts[: w2 + 1].sum() / total
    p_high = counts[w2:].sum() / total
    return min(1.0, 2.0 * min(p_low, p_high))


def wilcoxon_signed_rank(
    paired_a,
    paired_b,
    zero_method: str = "drop",
    mode: str = "auto",
    exact_threshold: int = 25,
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Exact enumeration over sign assignments for small n, normal approximation
    with continuity correction otherwise. Zero differences are dropped by
    default; ``zero_method="pratt"`` ranks them first and then discards their
    ranks.
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired score lists must be 1-D and equally long")
    if a.size < 5:
        raise ValueError(f"need at least 5 pairs, got {a.size}")
    if zero_method not in ("drop", "pratt"):
        raise ValueError(f"unknown zero_method {zero_method!r}")
    if mode not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown mode {mode!r}")

    d = a - b
    nonzero = d != 0
    if not np.any(nonzero):
        raise ValueError("degenerate pairs: all differences are zero")

    if zero_method == "drop":
        d = d[nonzero]
        ranks = rankdata(np.abs(d))
    else:
        ranks_all = rankdata(np.abs(d))
        ranks = ranks_all[nonzero]
        d = d[nonzero]

    n = d.size
    w_plus = float(ranks[d > 0].sum())

    if mode == "exact" or (mode == "auto" and n <= exact_threshold):
        p = _exact_two_sided_p(ranks, w_plus)
        used = "exact"
    else:
        mean = ranks.sum() / 2.0
        sd = np.sqrt(np.sum(ranks**2) / 4.0)
        delta = w_plus - mean
        z = (delta - 0.5 * np.sign(delta)) / sd if delta != 0 else 0.0
        from scipy.stats import norm

        p = min(1.0, 2.0 * (1.0 - norm.cdf(abs(z))))
        used = "approx"
    return WilcoxonResult(p_value=float(p), statistic=w_plus, n_effective=n, mode=used)


@dataclass
class RtfReport:
    specnet: float
    unet: float
    full: float
    per_trial: dict = field(default_factory=dict)
    batch: int = 4
    seconds: float = 10.0
    sample_rate: int = 16000

    def as_dict(self) -> dict:
        return {
            "specnet": self.specnet,
            "unet": self.unet,
            "full": self.full,
            "per_trial": self.per_trial,
            "batch": self.batch,
            "seconds": self.seconds,
            "sample_rate": self.sample_rate,
        }


def rtf_benchmark(
    model,
    batch: int = 4,
    seconds: float = 10.0,
    sample_rate: int = 16000,
    trials: int = 5,
    warmup: int = 1,
    seed: int = 0,
) -> RtfReport:
    """Median real-time factor (processing time / audio duration) per submodule.

    Inputs are prepared outside the timed region; warm-up runs are excluded.
    """
    if trials < 3:
        raise ValueError("need at least 3 trials")
    torch.manual_seed(seed)
    t_len = round(seconds * sample_rate)
    x = 0.1 * torch.randn(batch, 1, t_len)

    with torch.no_grad():
        mag = magnitude_stft(x[:, 0], model.specnet.cfg.stft)
        y_hat = model.specnet(mag)
        cond = model.upsampler(y_hat, t_len)
        merged = model.conditioner(x, cond)

    audio_seconds = batch * seconds

    def timed(fn, arg):
        times = []
        with torch.no_grad():
            for _ in range(warmup):
                fn(arg)
            for _ in range(trials):
                start = time.perf_counter()
                fn(arg)
                times.append((time.perf_counter() - start) / audio_seconds)
        return times

    per_trial = {
        "specnet": timed(model.specnet, mag),
        "unet": timed(model.unet, merged),
        "full": timed(model.forward, x),
    }
    med = {k: float(np.median(v)) for k, v in per_trial.items()}
    return RtfReport(
        specnet=med["specnet"],
        unet=med["unet"],
        full=med["full"],
        per_trial=per_trial,
        batch=batch,
        seconds=seconds,
        sample_rate=sample_rate,
    )


@dataclass(frozen=True)
class ExternalMetric:
    """Command-line adapter for an external metric tool.

    The command template gets {ref} and {est} substituted with WAV paths; the
    score is the first group of ``pattern`` matched against stdout.
    """

    name: str
    command: str
    pattern: str = r"([-+]?\d+\.?\d*)"

    def run(self, ref_path, est_path) -> float:
        cmd = [
            part.format(ref=str(ref_path), est=str(est_path))
            for part in shlex.split(self.command)
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=300)
        if proc.returncode != 0:
            raise RuntimeError(
                f"external metric {self.name!r} failed with code {proc.returncode}: "
                f"{proc.stderr.strip()}"
            )
        match = re.search(self.pattern, proc.stdout)
        if not match:
            raise RuntimeError(
                f"external metric {self.name!r} output did not match its pattern"
            )
        return float(match.group(1))


@dataclass
class MetricReport:
    version: int
    config_hash: str
    items: list
    aggregates: dict

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "items": self.items,
            "aggregates": self.aggregates,
        }


def evaluate_testset(
    manifest_path,
    model,
    out_path=None,
    lsd_params: StftParams = StftParams(256, 1024, 1024),
    external_metrics=(),
    config_blob=None,
) -> MetricReport:
    """Denoise every manifest entry and report per-utterance + mean metrics.

    Per-item failures become error entries instead of aborting the run.
    """
    from .data import measure_snr_db, read_manifest, read_wav, write_wav

    records = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    items = []
    for rec in records:
        entry = {"noisy_path": rec.noisy_path, "clean_path": rec.clean_path}
        try:
            clean = read_wav(base / rec.clean_path)
            noisy = read_wav(base / rec.noisy_path)
            with torch.no_grad():
                x = torch.from_numpy(noisy.samples.astype(np.float32))[None, None, :]
                est_samples = model(x)[0, 0].numpy().astype(np.float64)
            est = Waveform(est_samples, noisy.sample_rate)

            entry["si_sdr_db"] = si_sdr(clean, est)
            entry["lsd_db"] = lsd(clean, est, lsd_params)
            entry["snr_db"] = float(measure_snr_db(clean, est))
            if external_metrics:
                with tempfile.TemporaryDirectory() as tmp:
                    est_path = Path(tmp) / "est.wav"
                    write_wav(est_path, est)
                    for metric in external_metrics:
                        try:
                            entry[metric.name] = metric.run(
                                base / rec.clean_path, est_path
                            )
                        except Exception as e:  # tool missing or misbehaving
                            entry[f"{metric.name}_error"] = str(e)
        except Exception as e:
            entry["error"] = str(e)
        items.append(entry)

    metric_names = sorted(
        {k for item in items for k in item if k.endswith("_db") or k.endswith("_score")}
    )
    aggregates = {"count": len(items), "errors": sum("error" in i for i in items)}
    for name in metric_names:
        values = [i[name] for i in items if name in i]
        if values:
            aggregates[f"mean_{name}"] = float(np.mean(values))

    blob = json.dumps(config_blob, sort_keys=True) if config_blob else "unconfigured"
    report = MetricReport(
        version=1,
        config_hash=hashlib.sha256(blob.encode()).hexdigest()[:16],
        items=items,
        aggregates=aggregates,
    )
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(report.as_dict(), f, indent=2)
    return report
