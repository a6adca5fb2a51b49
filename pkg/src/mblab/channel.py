"""ULA beam codebook, geometric OFDM channel, beam selection, SNR and capacity.

Complex vectors are plain ``complex128`` numpy arrays. A channel response is
an array of shape (K, M): one length-M vector per subcarrier.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
SNR_FLOOR_DB = -300.0
# powers within this relative margin of the maximum count as ties
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CodebookConfig:
    n_beams: int
    n_antennas: int
    spacing: float = 0.5  # in wavelengths
    wavelength: float = SPEED_OF_LIGHT / 28e9

    def __post_init__(self):
        if self.n_beams < 1 or self.n_antennas < 1:
            raise ValueError(f"codebook needs N >= 1 and M >= 1, got N={self.n_beams}, M={self.n_antennas}")
        if self.spacing <= 0 or self.wavelength <= 0:
            raise ValueError(f"spacing and wavelength must be positive, got {self.spacing}, {self.wavelength}")


@dataclass(frozen=True)
class Codebook:
    vectors: np.ndarray  # (N, M) complex
    config: CodebookConfig
    angles: np.ndarray = field(repr=False)  # (N,) azimuths phi_n

    def __len__(self) -> int:
        return self.vectors.shape[0]


def beam_angles(n_beams: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_beams) / n_beams


def build_codebook(config: CodebookConfig) -> Codebook:
    """Constant-modulus steering codebook with azimuths 2*pi*n/N.

    Entry m of beam n is exp(j * 2*pi * spacing * sin(phi_n) * m) / sqrt(M).
    """
    phi = beam_angles(config.n_beams)
    m = np.arange(config.n_antennas)
    phase = 2.0 * np.pi * config.spacing * np.outer(np.sin(phi), m)
    vectors = np.exp(1j * phase) / np.sqrt(config.n_antennas)
    return Codebook(vectors, config, phi)


def steering_vector(azimuth, n_antennas: int, spacing: float = 0.5) -> np.ndarray:
    """Unnormalised ULA response for the given azimuth(s); shape (..., M).

    Uses the conjugate of the codebook phase law, so a path arriving at
    azimuth phi_n adds coherently under h^T w_n.
    """
    az = np.asarray(azimuth, dtype=np.float64)
    m = np.arange(n_antennas)
    return np.exp(-1j * 2.0 * np.pi * spacing * np.sin(az)[..., None] * m)


@dataclass(frozen=True)
class ChannelConfig:
    n_subcarriers: int = 32
    n_taps: int = 256
    max_paths: int = 4
    sampling_period: float = 1.0 / 0.2e9
    noise_power: float = 1e-12  # watts
    pulse: str = "impulse"  # or "raised_cosine"
    rolloff: float = 0.25

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_taps < 1 or self.max_paths < 0:
            raise ValueError(
                f"need K >= 1, D >= 1, L >= 0; got K={self.n_subcarriers}, D={self.n_taps}, L={self.max_paths}"
            )
        if self.sampling_period <= 0 or self.noise_power <= 0:
            raise ValueError("sampling period and noise power must be positive")
        if self.pulse not in ("impulse", "raised_cosine"):
            raise ValueError(f"unknown pulse shape {self.pulse!r}")


@dataclass
class PathSet:
    gain: np.ndarray  # complex amplitude per path
    delay: np.ndarray  # seconds
    azimuth: np.ndarray  # radians, relative to the array boresight
    elevation: np.ndarray  # radians; carried but not used by the ULA manifold

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.complex128).reshape(-1)
        self.delay = np.asarray(self.delay, dtype=np.float64).reshape(-1)
        self.azimuth = np.asarray(self.azimuth, dtype=np.float64).reshape(-1)
        self.elevation = np.asarray(self.elevation, dtype=np.float64).reshape(-1)
        n = len(self.gain)
        if not (len(self.delay) == len(self.azimuth) == len(self.elevation) == n):
            raise ValueError("path arrays must have equal length")
        if np.any(self.delay < 0):
            raise ValueError("path delays must be non-negative")

    def __len__(self) -> int:
        return len(self.gain)

    @classmethod
    def empty(cls) -> "PathSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))


def pulse_shape(t: np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    """Evaluate the pulse at times ``t`` (seconds).

    ``impulse`` is ideal sampling: 1 on the sample nearest the path delay,
    i.e. for t in [-Ts/2, Ts/2), else 0. ``raised_cosine`` is the usual
    roll-off pulse, truncated to the tap window.
    """
    x = np.asarray(t, dtype=np.float64) / cfg.sampling_period
    if cfg.pulse == "impulse":
        return ((x >= -0.5) & (x < 0.5)).astype(np.float64)
    beta = cfg.rolloff
    out = np.sinc(x)
    if beta > 0:
        denom = 1.0 - (2.0 * beta * x) ** 2
        singular = np.isclose(denom, 0.0)
        safe = np.where(singular, 1.0, denom)
        out = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)), out * np.cos(np.pi * beta * x) / safe)
    return out


def channel_response(paths: PathSet, cfg: ChannelConfig, n_antennas: int, spacing: float = 0.5) -> np.ndarray:
    """Frequency-domain channel, shape (K, M).

    h_k = sum_d sum_l gain_l * exp(-j 2 pi k d / K) * p(d Ts - delay_l) * a(azimuth_l)
    """
    K, D = cfg.n_subcarriers, cfg.n_taps
    if len(paths) > cfg.max_paths:
        raise ValueError(f"{len(paths)} paths exceed the configured maximum L={cfg.max_paths}")
    if len(paths) == 0:
        return np.zeros((K, n_antennas), dtype=np.complex128)
    d = np.arange(D)
    taps = pulse_shape(d[:, None] * cfg.sampling_period - paths.delay[None, :], cfg)  # (D, L)
    dft = np.exp(-2j * np.pi * np.outer(np.arange(K), d) / K)  # (K, D)
    coeff = dft @ (taps * paths.gain[None, :])  # (K, L)
    return coeff @ steering_vector(paths.azimuth, n_antennas, spacing)  # (K, M)


def beam_powers(h: np.ndarray, codebook: Codebook) -> np.ndarray:
    """(1/K) sum_k |h_k^T w_n|^2 for every beam n."""
    h = np.atleast_2d(h)
    if h.shape[1] != codebook.vectors.shape[1]:
        raise ValueError(f"channel has {h.shape[1]} antennas, codebook has {codebook.vectors.shape[1]}")
    return np.mean(np.abs(h @ codebook.vectors.T) ** 2, axis=0)


def select_beam(h: np.ndarray, codebook: Codebook) -> tuple[int, float]:
    """Return (index, power) of the beam maximising average beamformed power.

    Ties (within a relative 1e-12) go to the smallest index.
    """
    if len(codebook) == 0:
        raise ValueError("select_beam: empty codebook")
    powers = beam_powers(h, codebook)
    best = powers.max()
    idx = int(np.flatnonzero(powers >= best * (1.0 - TIE_RTOL))[0])
    return idx, float(powers[idx])


def to_db(power_linear: float) -> float:
    if power_linear <= 0:
        return SNR_FLOOR_DB
    return max(10.0 * np.log10(power_linear), SNR_FLOOR_DB)


def received_snr(h: np.ndarray, w: np.ndarray, noise_power: float) -> tuple[float, float]:
    """Average SNR over subcarriers for a unit-power symbol: (linear, dB)."""
    if noise_power <= 0:
        raise ValueError(f"noise power must be positive, got {noise_power}")
    h = np.atleast_2d(h)
    w = np.asarray(w)
    if h.shape[1] != w.shape[0]:
        raise ValueError(f"channel has {h.shape[1]} antennas, beam vector has {w.shape[0]}")
    snr = float(np.mean(np.abs(h @ w) ** 2) / noise_power)
    return snr, to_db(snr)


def capacity(snr_linear: float, bandwidth_hz: float) -> float:
    """Shannon capacity B log2(1 + SNR) in bit/s."""
    if snr_linear < 0:
        raise ValueError(f"SNR must be non-negative, got {snr_linear}")
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    return float(bandwidth_hz * np.log2(1.0 + snr_linear))


def thermal_noise_power(bandwidth_hz: float, noise_figure_db: float = 7.0) -> float:
    """kTB noise power in watts at 290 K plus receiver noise figure."""
    return 1.380649e-23 * 290.0 * bandwidth_hz * 10.0 ** (noise_figure_db / 10.0)


def export_codebook_csv(codebook: Codebook, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "m", "re", "im"])
        for n, vec in enumerate(codebook.vectors):
            for m, value in enumerate(vec):
                writer.writerow([n, m, repr(float(value.real)), repr(float(value.imag))])
