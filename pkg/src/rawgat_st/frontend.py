"""Fixed sinc band-pass filterbank front-end.

The raw waveform is convolved with mel-spaced band-pass kernels whose cut-in
and cut-off frequencies are frozen. The filter axis is then treated as the
height of a single-channel image and 3x3 max-pooled, which is what reduces 70
filters to 23 rows (the pooling runs across the filter axis as well as time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .layers import BatchNorm, Module
from .tensor import Tensor

SAMPLE_RATE = 16000
NUM_FILTERS = 70
KERNEL_LENGTH = 129
SEGMENT_LENGTH = 64600


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class SincFilterbank:
    num_filters: int
    kernel_length: int
    sample_rate: int
    band_edges: np.ndarray  # (num_filters, 2) cut-in / cut-off in Hz
    impulse_responses: Tensor  # (num_filters, 1, kernel_length), frozen

    @property
    def centers(self) -> np.ndarray:
        return self.band_edges.mean(axis=1)


def _bandpass_kernel(f1: float, f2: float, kernel_length: int, sample_rate: int) -> np.ndarray:
    half = (kernel_length - 1) // 2
    n = np.arange(-half, half + 1, dtype=np.float64)
    high = 2.0 * f2 / sample_rate * np.sinc(2.0 * f2 * n / sample_rate)
    low = 2.0 * f1 / sample_rate * np.sinc(2.0 * f1 * n / sample_rate)
    return (high - low) * np.hamming(kernel_length)


def build_filterbank(
    num_filters: int = NUM_FILTERS,
    kernel_length: int = KERNEL_LENGTH,
    sample_rate: int = SAMPLE_RATE,
    dtype=np.float32,
    nfft: int = 8192,
) -> SincFilterbank:
    """Mel-spaced, Hamming-windowed sinc band-pass kernels.

    ``num_filters + 2`` points are placed uniformly on the mel axis between
    0 Hz and Nyquist; filter ``k`` spans points ``k+1`` to ``k+2`` so every
    cut-in is strictly positive and the last cut-off sits at Nyquist. Each
    kernel is scaled to unit peak magnitude response.
    """
    if kernel_length % 2 == 0:
        raise ValueError(f"kernel_length must be odd, got {kernel_length}")
    if num_filters < 1:
        raise ValueError("num_filters must be >= 1")
    nyquist = sample_rate / 2.0
    pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), num_filters + 2))
    pts[-1] = nyquist
    edges = np.stack([pts[1:-1], pts[2:]], axis=1)

    kernels = np.empty((num_filters, 1, kernel_length))
    for k, (f1, f2) in enumerate(edges):
        h = _bandpass_kernel(f1, f2, kernel_length, sample_rate)
        peak = np.abs(np.fft.rfft(h, nfft)).max()
        kernels[k, 0] = h / peak
    return SincFilterbank(
        num_filters=num_filters,
        kernel_length=kernel_length,
        sample_rate=sample_rate,
        band_edges=edges,
        impulse_responses=Tensor(kernels.astype(dtype)),
    )


class SincFrontend(Module):
    """Waveform (B, L) -> time-frequency map (B, 1, F, W) after pool, BN and SeLU."""

    def __init__(self, bank: SincFilterbank = None, segment_length: int = SEGMENT_LENGTH, dtype=np.float32):
        self.bank = bank if bank is not None else build_filterbank(dtype=dtype)
        self.segment_length = segment_length
        self.bn = BatchNorm(1, dtype=dtype)

    def filter(self, wave: Tensor) -> Tensor:
        """Sinc convolution only: (B, L) -> (B, num_filters, L - K + 1)."""
        if wave.ndim == 1:
            wave = wave.reshape(1, -1)
        if wave.shape[-1] != self.segment_length:
            raise ValueError(
                f"front-end expects {self.segment_length} samples, got {wave.shape[-1]}; "
                "normalise length with data.fix_length first"
            )
        x = wave.reshape(wave.shape[0], 1, wave.shape[1])
        return ops.conv1d(x, self.bank.impulse_responses)

    def forward(self, wave: Tensor, trace=None) -> Tensor:
        y = self.filter(wave)
        if trace is not None:
            trace("sinc", y.shape[1:])
        y = y.reshape(y.shape[0], 1, y.shape[1], y.shape[2])
        if trace is not None:
            trace("add_channel", y.shape[1:])
        y = ops.maxpool2d(y, 3)
        if trace is not None:
            trace("maxpool", y.shape[1:])
        return ops.selu(self.bn(y))


def frontend_output_width(segment_length: int, kernel_length: int = KERNEL_LENGTH) -> int:
    return (segment_length - kernel_length + 1) // 3
