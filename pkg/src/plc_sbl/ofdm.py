"""Baseband OFDM transmit/receive chain with sample-level time-domain interleaving.

Frequency-domain vectors use the unitary DFT (``norm="ortho"``), so
``y = F r`` and ``r = F^* x``. The cyclic prefix is not materialised: the
channel acts as a circulant matrix, i.e. a per-tone gain ``Lambda``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import dft_matrix, make_rng

SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class OfdmConfig:
    """Tone plan and channel of one OFDM system.

    ``nondata_tones`` holds nulls and pilots (the observation set I, 0-based);
    ``pilot_tones`` is the subset of I that carries known symbols.
    """

    n_fft: int = 128
    data_tones: tuple[int, ...] = tuple(range(32, 104))
    pilot_tones: tuple[int, ...] = ()
    cp_len: int = 16
    channel: tuple[complex, ...] | None = None

    def __post_init__(self):
        data = tuple(int(k) for k in self.data_tones)
        pilots = tuple(int(k) for k in self.pilot_tones)
        object.__setattr__(self, "data_tones", data)
        object.__setattr__(self, "pilot_tones", pilots)
        if len(set(data)) != len(data) or any(not 0 <= k < self.n_fft for k in data):
            raise ValueError("data tones must be distinct indices in [0, n_fft)")
        if set(pilots) & set(data) or any(not 0 <= k < self.n_fft for k in pilots):
            raise ValueError("pilot tones must be non-data indices in [0, n_fft)")
        if len(data) == self.n_fft:
            raise ValueError("at least one null or pilot tone is required")
        if self.channel is not None:
            ch = tuple(complex(c) for c in self.channel)
            if len(ch) != self.n_fft:
                raise ValueError("channel response needs one gain per tone")
            lam = np.asarray(ch)
            used = list(data) + list(pilots)
            if np.any(np.abs(lam[used]) == 0):
                raise ValueError("channel gain must be non-zero on data and pilot tones")
            object.__setattr__(self, "channel", ch)

    @property
    def nondata_tones(self) -> np.ndarray:
        mask = np.ones(self.n_fft, bool)
        mask[list(self.data_tones)] = False
        return np.flatnonzero(mask)

    @property
    def data_idx(self) -> np.ndarray:
        return np.asarray(self.data_tones, dtype=np.intp)

    @property
    def n_data(self) -> int:
        return len(self.data_tones)

    @property
    def n_obs(self) -> int:
        return self.n_fft - self.n_data

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.n_data

    @property
    def lam(self) -> np.ndarray:
        if self.channel is None:
            return np.ones(self.n_fft, dtype=complex)
        return np.asarray(self.channel)

    @property
    def flat(self) -> bool:
        return self.channel is None or bool(np.all(np.asarray(self.channel) == 1))

    def dft(self) -> np.ndarray:
        return dft_matrix(self.n_fft)

    def obs_rows(self) -> np.ndarray:
        """F_I: DFT rows of the null and pilot tones."""
        return self.dft()[self.nondata_tones]

    def data_rows(self) -> np.ndarray:
        return self.dft()[self.data_idx]

    def to_dict(self) -> dict:
        d = {"n_fft": self.n_fft, "data_tones": list(self.data_tones),
             "pilot_tones": list(self.pilot_tones), "cp_len": self.cp_len}
        if self.channel is not None:
            d["channel"] = [[c.real, c.imag] for c in self.channel]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OfdmConfig":
        d = dict(d)
        if "data_tones" in d and isinstance(d["data_tones"], dict):
            rng = d["data_tones"]
            d["data_tones"] = tuple(range(int(rng["first"]), int(rng["last"]) + 1))
        if d.get("channel") is not None:
            d["channel"] = tuple(complex(*c) if isinstance(c, (list, tuple)) else complex(c)
                                 for c in d["channel"])
        for k in ("data_tones", "pilot_tones"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class TdiConfig:
    """Random sample-level interleaver over ``depth`` OFDM symbols."""

    depth: int = 100
    n_fft: int = 128
    seed: int = 0
    permutation: tuple[int, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("interleaver depth must be positive")
        size = self.depth * self.n_fft
        if self.permutation is None:
            perm = make_rng(self.seed, 0x7D1).permutation(size)
        else:
            perm = np.asarray(self.permutation, dtype=np.intp)
            if perm.shape != (size,) or not np.array_equal(np.sort(perm), np.arange(size)):
                raise ValueError("permutation must be a bijection on depth*n_fft samples")
        perm = np.asarray(perm, dtype=np.intp)
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)

    @property
    def size(self) -> int:
        return self.depth * self.n_fft

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty(self.size, dtype=np.intp)
        inv[self.permutation] = np.arange(self.size)
        return inv

    def to_dict(self) -> dict:
        return {"depth": self.depth, "n_fft": self.n_fft, "seed": self.seed}

    def __eq__(self, other):
        return (isinstance(other, TdiConfig) and self.depth == other.depth
                and self.n_fft == other.n_fft and np.array_equal(self.permutation, other.permutation))

    def __hash__(self):
        return hash((self.depth, self.n_fft, self.seed))


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Gray QPSK: bit pair (b1, b0) -> ((1 - 2 b1) + i (1 - 2 b0)) / sqrt(2)."""
    b = np.asarray(bits, dtype=np.int8)
    if b.shape[-1] % 2:
        raise ValueError("QPSK needs an even number of bits")
    return ((1 - 2 * b[..., 0::2]) + 1j * (1 - 2 * b[..., 1::2])) * SQRT_HALF


def qpsk_demap(symbols: np.ndarray) -> np.ndarray:
    """Minimum-distance hard decisions, inverse of :func:`qpsk_map`."""
    s = np.asarray(symbols)
    out = np.empty(s.shape[:-1] + (2 * s.shape[-1],), dtype=np.uint8)
    out[..., 0::2] = s.real < 0
    out[..., 1::2] = s.imag < 0
    return out


def frequency_symbol(cfg: OfdmConfig, data_symbols, pilot_values=None) -> np.ndarray:
    """Assemble x: data on data tones, pilots on pilot tones, zeros on nulls."""
    d = np.asarray(data_symbols)
    if d.shape[-1] != cfg.n_data:
        raise ValueError(f"expected {cfg.n_data} data symbols, got {d.shape[-1]}")
    x = np.zeros(d.shape[:-1] + (cfg.n_fft,), dtype=complex)
    x[..., cfg.data_idx] = d
    if cfg.pilot_tones:
        if pilot_values is None:
            raise ValueError("pilot values required for a config with pilot tones")
        p = np.asarray(pilot_values)
        if p.shape[-1] != len(cfg.pilot_tones):
            raise ValueError("pilot value count does not match pilot tones")
        x[..., list(cfg.pilot_tones)] = p
    return x


def modulate(cfg: OfdmConfig, data_symbols, pilot_values=None) -> np.ndarray:
    """Time-domain OFDM symbol F^* x (no cyclic prefix materialised)."""
    return np.fft.ifft(frequency_symbol(cfg, data_symbols, pilot_values), norm="ortho")


def apply_channel(cfg: OfdmConfig, time_signal, e, n) -> np.ndarray:
    """r = H F^* x + e + n with circulant H given by its tone gains."""
    s = np.asarray(time_signal)
    e = np.asarray(e)
    n = np.asarray(n)
    if e.shape[-1] != cfg.n_fft or n.shape[-1] != cfg.n_fft or s.shape[-1] != cfg.n_fft:
        raise ValueError("signal and noise vectors must have n_fft samples")
    if not cfg.flat:
        s = np.fft.ifft(cfg.lam * np.fft.fft(s, norm="ortho"), norm="ortho")
    return s + e + n


def demodulate(cfg: OfdmConfig, r) -> np.ndarray:
    """y = F r."""
    r = np.asarray(r)
    if r.shape[-1] != cfg.n_fft:
        raise ValueError("received vector must have n_fft samples")
    return np.fft.fft(r, norm="ortho")


def known_nondata(cfg: OfdmConfig, pilot_values=None) -> np.ndarray:
    """(Lambda x)_I: zeros on nulls, channel-scaled pilots on pilot tones."""
    known = np.zeros(cfg.n_obs, dtype=complex)
    if cfg.pilot_tones:
        if pilot_values is None:
            raise ValueError("pilot values required for a config with pilot tones")
        pos = np.searchsorted(cfg.nondata_tones, cfg.pilot_tones)
        known = np.broadcast_to(known, np.shape(pilot_values)[:-1] + known.shape).copy()
        known[..., pos] = cfg.lam[list(cfg.pilot_tones)] * np.asarray(pilot_values)
    return known


def observe_nondata(cfg: OfdmConfig, y, pilot_values=None) -> np.ndarray:
    """z = y_I - (Lambda x)_I = F_I e + g_I."""
    y = np.asarray(y)
    return y[..., cfg.nondata_tones] - known_nondata(cfg, pilot_values)


def subtract_and_detect(cfg: OfdmConfig, y, e_hat) -> tuple[np.ndarray, np.ndarray]:
    """Cancel the noise estimate on the data tones, equalise and slice.

    Returns the equalised data-tone symbols and the Gray-demapped hard bits.
    """
    y = np.asarray(y)
    e_hat = np.asarray(e_hat)
    if e_hat.shape[-1] != cfg.n_fft:
        raise ValueError("noise estimate must have n_fft samples")
    yd = y[..., cfg.data_idx] - np.fft.fft(e_hat, norm="ortho")[..., cfg.data_idx]
    sym = yd / cfg.lam[cfg.data_idx]
    return sym, qpsk_demap(sym)


def tdi_interleave(cfg: TdiConfig, samples) -> np.ndarray:
    """Permute ``depth * n_fft`` time samples: out[k] = in[perm[k]]."""
    s = np.asarray(samples)
    if s.shape[-1] != cfg.size:
        raise ValueError(f"interleaver expects {cfg.size} samples, got {s.shape[-1]}")
    return s[..., cfg.permutation]


def tdi_deinterleave(cfg: TdiConfig, samples) -> np.ndarray:
    s = np.asarray(samples)
    if s.shape[-1] != cfg.size:
        raise ValueError(f"deinterleaver expects {cfg.size} samples, got {s.shape[-1]}")
    out = np.empty_like(s)
    out[..., cfg.permutation] = s
    return out
