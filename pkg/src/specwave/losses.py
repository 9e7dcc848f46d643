"""Training objectives for both stages.

Stage 1 (spectrogram denoiser): per-frame log-magnitude L1 plus spectral
convergence between clean and predicted magnitudes.

Stage 2 (hybrid denoiser): L1 waveform loss plus a multi-resolution STFT
loss, either full-band or restricted to the upper frequency half. The log
term of each resolution is normalized by the waveform length T as printed in
the source formulation; a switch allows normalizing by the frame count
instead (``log_norm="frames"``).

Magnitudes are floored at EPS_MAG inside every logarithm.
"""

from dataclasses import dataclass, field

import torch

from .dsp import StftParams
from .modules import magnitude_stft

EPS_MAG = 1e-5

DEFAULT_RESOLUTIONS = (
    StftParams(hop=50, win_length=240, n_fft=512),
    StftParams(hop=120, win_length=600, n_fft=1024),
    StftParams(hop=240, win_length=1200, n_fft=2048),
)

BANDS = ("full", "high")


@dataclass
class LossBreakdown:
    """Total loss with its named components (all torch scalars)."""

    total: torch.Tensor
    terms: dict = field(default_factory=dict)

    def item(self) -> float:
        return float(self.total.detach())

    def detach_floats(self) -> dict:
        out = {name: float(t.detach()) for name, t in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    return x[None] if x.dim() == 2 else x


def _frob(x: torch.Tensor) -> torch.Tensor:
    # Frobenius norm per batch element, [B, F, T] -> [B]
    return torch.linalg.vector_norm(x, dim=(1, 2))


def _log_floored(x: torch.Tensor, eps: float) -> torch.Tensor:
    return torch.log(torch.clamp(x, min=eps))


def spec_loss_breakdown(
    y: torch.Tensor, y_hat: torch.Tensor, eps: float = EPS_MAG
) -> LossBreakdown:
    """Spectrogram loss: (1/T_spec) * ||log(y/y_hat)||_1 + ||y-y_hat||_F / ||y||_F.

    Accepts [F, T_spec] or [B, F, T_spec]; batched inputs are averaged.
    """
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    y = _as_batch(y)
    y_hat = _as_batch(y_hat)
    t_spec = y.shape[2]

    y_norm = _frob(y)
    if torch.any(y_norm == 0):
        raise ValueError("degenerate clean target: all-silence spectrogram")

    log_term = (
        (_log_floored(y, eps) - _log_floored(y_hat, eps)).abs().sum(dim=(1, 2)) / t_spec
    ).mean()
    sc_term = (_frob(y - y_hat) / y_norm).mean()
    return LossBreakdown(
        total=log_term + sc_term, terms={"log_mag": log_term, "sc": sc_term}
    )


def spec_loss(y: torch.Tensor, y_hat: torch.Tensor, eps: float = EPS_MAG) -> torch.Tensor:
    return spec_loss_breakdown(y, y_hat, eps).total


def _band_slice(mag: torch.Tensor, band: str) -> torch.Tensor:
    if band == "full":
        return mag
    if band == "high":
        f = mag.shape[1]
        return mag[:, f // 2 :, :]
    raise ValueError(f"unknown band {band!r}; expected one of {BANDS}")


def stft_resolution_term(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    p: StftParams,
    band: str = "full",
    eps: float = EPS_MAG,
    log_norm: str = "waveform",
) -> LossBreakdown:
    """One resolution of the multi-resolution STFT loss.

    Spectral convergence ||s(x)-s(x_hat)||_F / ||s(x)||_F plus the log
    magnitude L1 normalized by the waveform length T (``log_norm="waveform"``,
    as printed) or by the frame count (``log_norm="frames"``).
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if log_norm not in ("waveform", "frames"):
        raise ValueError(f"log_norm must be 'waveform' or 'frames', got {log_norm!r}")
    squeeze = x.dim() == 1
    if squeeze:
        x = x[None]
        x_hat = x_hat[None]
    t = x.shape[1]
    if torch.any(torch.all(x == 0, dim=1)):
        raise ValueError("degenerate clean target: all-silence waveform")

    s_x = _band_slice(magnitude_stft(x, p), band)
    s_hat = _band_slice(magnitude_stft(x_hat, p), band)
    x_norm = _frob(s_x)

    denom = t if log_norm == "waveform" else s_x.shape[2]
    sc = (_frob(s_x - s_hat) / x_norm).mean()
    log_mag = (
        (_log_floored(s_x, eps) - _log_floored(s_hat, eps)).abs().sum(dim=(1, 2)) / denom
    ).mean()
    return LossBreakdown(total=sc + log_mag, terms={"sc": sc, "log_mag": log_mag})


def mrstft(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    resolutions=DEFAULT_RESOLUTIONS,
    band: str = "full",
    eps: float = EPS_MAG,
    log_norm: str = "waveform",
) -> LossBreakdown:
    """Multi-resolution STFT loss: sum of per-resolution terms."""
    if len(resolutions) == 0:
        raise ValueError("resolution set must be nonempty")
    terms = {}
    total = None
    for i, p in enumerate(resolutions):
        part = stft_resolution_term(x, x_hat, p, band, eps, log_norm)
        terms[f"res{i}_sc"] = part.terms["sc"]
        terms[f"res{i}_log_mag"] = part.terms["log_mag"]
        total = part.total if total is None else total + part.total
    return LossBreakdown(total=total, terms=terms)


def waveform_l1(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute waveform error (mean keeps the scale clip-length-invariant)."""
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def hybrid_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    resolutions=DEFAULT_RESOLUTIONS,
    band: str = "full",
    eps: float = EPS_MAG,
    log_norm: str = "waveform",
) -> LossBreakdown:
    """Stage-2 objective: L1 waveform loss + multi-resolution STFT loss."""
    l1 = waveform_l1(x, x_hat)
    spectral = mrstft(x, x_hat, resolutions, band, eps, log_norm)
    terms = {"l1": l1, **spectral.terms}
    return LossBreakdown(total=l1 + spectral.total, terms=terms)
