"""Monte-Carlo BER simulation, CSV records and SNR-gain measurement."""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..fec import encode, viterbi_decode
from ..noise import impulsive_noise
from ..numerics import make_rng, sample_circular_gaussian
from ..ofdm import (apply_channel, demodulate, modulate, observe_nondata, qpsk_map,
                    subtract_and_detect, tdi_deinterleave)
from ..sbl import (DftRows, estimate_alltone, estimate_decision_feedback, estimate_nulltone,
                   estimate_sequential)
from .config import ExperimentConfig

CSV_HEADER = ("estimator", "noise", "snr_db", "bits", "errors", "ber", "symbols", "seed",
              "elapsed_s")


class SimulationError(RuntimeError):
    """Numerical or I/O failure during a sweep."""


@dataclass(frozen=True)
class BerRecord:
    estimator: str
    noise: str
    snr_db: float
    bits: int
    errors: int
    symbols: int
    seed: int
    elapsed_s: float = 0.0

    def __post_init__(self):
        if self.bits <= 0:
            raise ValueError("a BER record needs at least one bit")

    @property
    def ber(self) -> float:
        return self.errors / self.bits

    def row(self) -> list[str]:
        return [self.estimator, self.noise, repr(self.snr_db), str(self.bits), str(self.errors),
                repr(self.ber), str(self.symbols), str(self.seed), repr(self.elapsed_s)]

    @classmethod
    def from_row(cls, row: dict) -> "BerRecord":
        rec = cls(row["estimator"], row["noise"], float(row["snr_db"]), int(row["bits"]),
                  int(row["errors"]), int(row["symbols"]), int(row["seed"]),
                  float(row["elapsed_s"]))
        if repr(rec.ber) != row["ber"]:
            raise ValueError(f"ber column {row['ber']} disagrees with errors/bits")
        return rec


def snr_key(snr_db: float) -> int:
    """Non-negative integer key for an SNR value, at milli-dB resolution."""
    k = int(round(snr_db * 1000))
    return 2 * k if k >= 0 else -2 * k - 1


def background_power(snr_db: float) -> float:
    """sigma2 for unit-energy data tones: SNR = 1 / sigma2 per tone."""
    return 10.0 ** (-snr_db / 10.0)


# --- one block -------------------------------------------------------------

def simulate_block(cfg: ExperimentConfig, snr_db: float, index: int) -> tuple[int, int]:
    """Simulate block ``index`` of a point; returns (bits counted, bit errors).

    Random draws depend only on (master_seed, SNR, block index), never on
    the receiver, so sweeps of different estimators see the same noise.
    """
    ofdm = cfg.ofdm
    S, N = cfg.block_symbols, ofdm.n_fft
    bps = ofdm.bits_per_symbol
    rng = make_rng(cfg.master_seed, snr_key(snr_db), index)
    s2 = background_power(snr_db)

    if cfg.coded:
        C = S // cfg.packet_symbols
        n_info = cfg.code.info_length(cfg.packet_symbols * bps)
        info = rng.integers(0, 2, (C, n_info), dtype=np.uint8)
        coded = encode(cfg.code, info).reshape(S, bps)
    else:
        info = rng.integers(0, 2, (S, bps), dtype=np.uint8)
        coded = info
    tx = modulate(ofdm, qpsk_map(coded))

    phase = 0
    if cfg.noise.kind == "lptv":
        phase = int(rng.integers(cfg.noise.params.period))
    e = impulsive_noise(rng, cfg.noise, S * N, s2, phase)
    if cfg.tdi is not None:
        # the channel sees the interleaved stream; the receiver deinterleaves it
        e = tdi_deinterleave(cfg.tdi, e)
    e = e.reshape(S, N)
    g = sample_circular_gaussian(rng, (S, N), s2)
    y = demodulate(ofdm, apply_channel(ofdm, tx, e, g))

    if cfg.estimator == "decision_feedback":
        P = cfg.packet_symbols
        _, info_hat, _ = estimate_decision_feedback(
            y.reshape(S // P, P, N), ofdm, cfg.code, cfg.df_rounds, cfg.sbl,
            sigma2=s2, a=cfg.df_a, b=cfg.df_b)
        return info.size, int(np.count_nonzero(info_hat != info))

    e_hat = estimate_noise(cfg, y, e, s2)
    _, hard = subtract_and_detect(ofdm, y, e_hat)
    if cfg.coded:
        info_hat, _ = viterbi_decode(cfg.code, hard.reshape(info.shape[0], -1))
        return info.size, int(np.count_nonzero(info_hat != info))
    return info.size, int(np.count_nonzero(hard != info))


def estimate_noise(cfg: ExperimentConfig, y, e_true, sigma2) -> np.ndarray:
    """Time-domain impulse estimate for a (S, N) block of demodulated symbols."""
    ofdm = cfg.ofdm
    N = ofdm.n_fft
    kind = cfg.estimator
    if kind == "none":
        return np.zeros_like(y)
    if kind == "oracle_subtraction":
        return e_true
    if kind == "nulltone":
        e_hat, _ = estimate_nulltone(observe_nondata(ofdm, y), DftRows(ofdm.nondata_tones, N),
                                     cfg.sbl, sigma2=sigma2)
        return e_hat
    if kind == "alltone":
        e_hat, _, _ = estimate_alltone(y, ofdm.dft(), ofdm.lam, ofdm.nondata_tones, cfg.sbl,
                                       sigma2=sigma2)
        return e_hat
    if kind == "sequential":
        F_I = ofdm.obs_rows()
        gram = F_I.conj().T @ F_I
        z = observe_nondata(ofdm, y)
        return np.stack([estimate_sequential(zi, F_I, cfg.sbl, sigma2=sigma2, gram=gram).e_hat
                         for zi in z])
    raise ValueError(f"estimator {kind!r} has no standalone noise estimate")


# --- points and sweeps -----------------------------------------------------

def _stop(cfg: ExperimentConfig, symbols: int, errors: int) -> bool:
    if symbols >= cfg.max_symbols:
        return True
    return symbols >= cfg.min_symbols and errors >= cfg.min_bit_errors


def _block_job(args):
    cfg, snr_db, index = args
    return simulate_block(cfg, snr_db, index)


def run_point(cfg: ExperimentConfig, snr_db: float, *, workers: int = 1) -> BerRecord:
    """Simulate blocks until the stopping rule holds and return the BER record.

    With ``workers > 1`` blocks are farmed out in waves; results are reduced
    in block order and surplus blocks past the stopping point are dropped,
    so the record does not depend on the worker count.
    """
    t0 = time.perf_counter()
    bits = errors = symbols = 0
    index = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while True:
            if pool is None:
                results = [simulate_block(cfg, snr_db, index)]
            else:
                jobs = [(cfg, snr_db, index + j) for j in range(workers)]
                results = list(pool.map(_block_job, jobs))
            for nb, ne in results:
                bits += nb
                errors += ne
                symbols += cfg.block_symbols
                index += 1
                if _stop(cfg, symbols, errors):
                    break
            if _stop(cfg, symbols, errors):
                break
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"numerical failure at {snr_db} dB: {exc}") from exc
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - t0 if cfg.timing else 0.0
    return BerRecord(cfg.estimator, cfg.noise_tag, float(snr_db), bits, errors, symbols,
                     cfg.master_seed, elapsed)


def format_csv(records: Iterable[BerRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def parse_csv(text: str) -> list[BerRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [BerRecord.from_row(row) for row in reader]


def read_csv(path: str | Path) -> list[BerRecord]:
    return parse_csv(Path(path).read_text())


def write_csv(path: str | Path, records: Sequence[BerRecord]) -> None:
    """Replace ``path`` atomically with the given records."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(format_csv(records))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_writable(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise SimulationError(f"output directory {parent} is missing or not writable")
    if path.exists() and (path.is_dir() or not os.access(path, os.W_OK)):
        raise SimulationError(f"output file {path} is not writable")


def run_sweep(cfg: ExperimentConfig, out: str | Path | None = None, *, resume: bool = True,
              workers: int = 1) -> list[BerRecord]:
    """Run every SNR point of ``cfg``; returns the records in SNR-list order.

    With ``out`` the CSV is rewritten atomically after each point. Rows
    already present for the same estimator, noise, SNR and seed are reused
    when ``resume`` is set; unrelated rows in the file are kept.
    """
    path = Path(out) if out is not None else None
    existing: list[BerRecord] = []
    if path is not None:
        _check_writable(path)
        if path.exists():
            try:
                existing = read_csv(path)
            except (ValueError, KeyError) as exc:
                raise SimulationError(f"cannot resume from {path}: {exc}") from exc
    done = {}
    if resume:
        done = {(r.estimator, r.noise, r.snr_db, r.seed): r for r in existing}
    keep = [r for r in existing
            if not (r.estimator == cfg.estimator and r.noise == cfg.noise_tag
                    and r.seed == cfg.master_seed and r.snr_db in cfg.snr_points)]
    records: list[BerRecord] = []
    for snr in cfg.snr_points:
        key = (cfg.estimator, cfg.noise_tag, snr, cfg.master_seed)
        rec = done.get(key) or run_point(cfg, snr, workers=workers)
        records.append(rec)
        if path is not None:
            try:
                write_csv(path, keep + records)
            except OSError as exc:
                raise SimulationError(f"cannot write {path}: {exc}") from exc
    return records


# --- SNR gain --------------------------------------------------------------

def _curve_points(curve) -> tuple[np.ndarray, np.ndarray]:
    pts = []
    for c in curve:
        if isinstance(c, BerRecord):
            # zero-error points sit at half an error so the log stays finite
            pts.append((c.snr_db, max(c.errors, 0.5) / c.bits))
        else:
            pts.append((float(c[0]), float(c[1])))
    pts.sort()
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def crossing_snr(curve, target_ber: float, name: str = "curve") -> float:
    """SNR where the curve first falls through ``target_ber``, log-linear in BER."""
    snr, ber = _curve_points(curve)
    if np.any(ber <= 0):
        raise ValueError(f"{name} has non-positive BER values; log interpolation needs BER > 0")
    lt = math.log10(target_ber)
    lb = np.log10(ber)
    for i in range(len(snr) - 1):
        if lb[i] >= lt >= lb[i + 1] and lb[i] != lb[i + 1]:
            return float(snr[i] + (lt - lb[i]) * (snr[i + 1] - snr[i]) / (lb[i + 1] - lb[i]))
    if len(snr) and np.any(lb == lt):
        return float(snr[np.flatnonzero(lb == lt)[0]])
    raise ValueError(f"{name} does not cross BER {target_ber:g} "
                     f"(range {ber.min():.3g} to {ber.max():.3g})")


def snr_gain(curve_a, curve_b, target_ber: float) -> float:
    """dB by which ``curve_b`` reaches ``target_ber`` at lower SNR than ``curve_a``."""
    return crossing_snr(curve_a, target_ber, "curve_a") - crossing_snr(curve_b, target_ber,
                                                                         "curve_b")
