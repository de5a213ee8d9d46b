"""Rate-1/2 convolutional code with zero-flush termination and hard Viterbi."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConvCode:
    """Feed-forward rate-1/2 code.

    Generators are octal with the most significant tap on the current input
    bit (the usual convention, e.g. K=7 (133, 171)).
    """

    constraint_length: int = 7
    generators: tuple[int, int] = (0o133, 0o171)
    terminated: bool = True

    def __post_init__(self):
        if self.constraint_length < 1:
            raise ValueError("constraint length must be positive")
        if len(self.generators) != 2:
            raise ValueError("rate-1/2 code needs exactly two generators")
        for g in self.generators:
            if g <= 0 or g >= 1 << self.constraint_length:
                raise ValueError(f"generator {g:o} does not fit constraint length")

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    def taps(self) -> np.ndarray:
        """(2, K) tap matrix; column i multiplies the input delayed by i."""
        k = self.constraint_length
        return np.array([[(g >> (k - 1 - i)) & 1 for i in range(k)] for g in self.generators],
                        dtype=np.uint8)

    def coded_length(self, n_info: int) -> int:
        return 2 * (n_info + (self.memory if self.terminated else 0))

    def info_length(self, n_coded: int) -> int:
        if n_coded % 2:
            raise ValueError("coded length must be even for a rate-1/2 code")
        n = n_coded // 2 - (self.memory if self.terminated else 0)
        if n < 0:
            raise ValueError("coded block shorter than the termination tail")
        return n


DEFAULT_CODE = ConvCode()


def encode(code: ConvCode, bits: np.ndarray) -> np.ndarray:
    """Encode one message (1-D) or a batch of equal-length messages (2-D)."""
    b = np.asarray(bits, dtype=np.uint8)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    if code.terminated:
        b = np.concatenate([b, np.zeros((b.shape[0], code.memory), np.uint8)], axis=1)
    n = b.shape[1]
    out = np.empty((b.shape[0], 2 * n), dtype=np.uint8)
    acc = np.zeros((b.shape[0], n), dtype=np.uint8)
    for j, row in enumerate(code.taps()):
        acc[:] = 0
        for d in np.flatnonzero(row):
            acc[:, d:] ^= b[:, : n - d]
        out[:, j::2] = acc
    return out[0] if single else out


def _trellis(code: ConvCode):
    """Branch outputs for every (state, input); state bit m-1 is the newest input."""
    m = code.memory
    states = np.arange(code.n_states)
    out = np.empty((code.n_states, 2, 2), dtype=np.uint8)
    for u in (0, 1):
        reg = (u << m) | states
        for j, g in enumerate(code.generators):
            v = reg & g
            par = np.zeros_like(v)
            while np.any(v):
                par ^= v & 1
                v >>= 1
            out[:, u, j] = par
    return out


def viterbi_decode(code: ConvCode, hard_bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-Hamming-distance decoding.

    Returns the decoded information bits and their re-encoded codeword.
    Accepts a single codeword or a 2-D batch; ties resolve deterministically.
    """
    r = np.asarray(hard_bits, dtype=np.uint8)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    if r.shape[1] % 2:
        raise ValueError("hard-bit block length must be even for a rate-1/2 code")
    steps = r.shape[1] // 2
    n_info = code.info_length(r.shape[1])
    m, ns = code.memory, code.n_states
    out = _trellis(code)

    # next state s' = (u << (m-1)) | (s >> 1); predecessors of s' are
    # s = ((s' & mask) << 1) | lsb, input u = s' >> (m-1)
    nxt = np.arange(ns)
    u_of = nxt >> (m - 1) if m else np.zeros(ns, dtype=int)
    mask = (1 << (m - 1)) - 1 if m else 0
    pred = np.stack([((nxt & mask) << 1) | lsb for lsb in (0, 1)]) if m else np.zeros((2, 1), int)
    brout = out[pred, u_of[None, :]]  # (2, ns, 2)

    B = r.shape[0]
    inf = np.iinfo(np.int32).max // 4
    pm = np.full((B, ns), inf, dtype=np.int32)
    pm[:, 0] = 0
    decisions = np.empty((steps, B, ns), dtype=np.uint8)
    for t in range(steps):
        rx = r[:, 2 * t : 2 * t + 2]
        bm = (brout[None, :, :, 0] ^ rx[:, None, None, 0]).astype(np.int32) + \
             (brout[None, :, :, 1] ^ rx[:, None, None, 1])
        cand = pm[:, pred] + bm  # (B, 2, ns)
        choice = (cand[:, 1, :] < cand[:, 0, :]).astype(np.uint8)
        pm = np.where(choice, cand[:, 1, :], cand[:, 0, :])
        pm = np.minimum(pm, inf)
        decisions[t] = choice

    state = np.zeros(B, dtype=np.intp) if code.terminated else np.argmin(pm, axis=1)
    info = np.empty((B, steps), dtype=np.uint8)
    rows = np.arange(B)
    for t in range(steps - 1, -1, -1):
        info[:, t] = u_of[state]
        lsb = decisions[t, rows, state]
        state = pred[lsb, state]
    info = info[:, :n_info]
    cw = encode(code, info)
    if single:
        return info[0], cw[0]
    return info, cw
