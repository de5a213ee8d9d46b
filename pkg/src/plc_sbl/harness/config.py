"""Experiment configuration, its validation and YAML round trip."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..fec import ConvCode
from ..noise import REFERENCE_GM, REFERENCE_MCA, NoiseModel, load_lptv, noise_from_dict, noise_to_dict
from ..ofdm import OfdmConfig, TdiConfig
from ..sbl import SblSettings

ESTIMATORS = ("none", "nulltone", "alltone", "decision_feedback", "sequential",
              "oracle_subtraction")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One BER sweep: a receiver, a noise model and a list of SNR points.

    Simulation runs in blocks of ``block_symbols`` OFDM symbols; with TDI a
    block is one interleaver frame, with coding it holds whole codewords of
    ``packet_symbols`` symbols each. A point stops once it has
    ``min_symbols`` symbols and ``min_bit_errors`` errors, or reaches
    ``max_symbols``.
    """

    estimator: str = "nulltone"
    noise: NoiseModel = field(default_factory=lambda: NoiseModel.gm(REFERENCE_GM.weights,
                                                                     REFERENCE_GM.variances))
    snr_points: tuple[float, ...] = (10.0, 15.0, 20.0)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    tdi: TdiConfig | None = None
    coded: bool = False
    code: ConvCode = field(default_factory=ConvCode)
    packet_symbols: int = 4
    block_symbols: int = 100
    min_symbols: int = 200
    min_bit_errors: int = 200
    max_symbols: int = 2000
    master_seed: int = 0
    sbl: SblSettings = field(default_factory=SblSettings)
    df_rounds: int = 2
    df_a: float = 0.0
    df_b: float = 0.0
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "snr_points", tuple(float(s) for s in self.snr_points))
        if not self.snr_points:
            raise ConfigError("snr_points must not be empty")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.min_symbols < 1:
            raise ConfigError("min_symbols must be at least 1")
        if self.min_bit_errors < 0:
            raise ConfigError("min_bit_errors must be non-negative")
        if self.max_symbols < self.min_symbols:
            raise ConfigError("max_symbols must be at least min_symbols")
        if self.block_symbols < 1:
            raise ConfigError("block_symbols must be at least 1")
        if self.estimator == "decision_feedback" and not self.coded:
            raise ConfigError("decision_feedback needs coding enabled")
        if self.df_rounds < 0:
            raise ConfigError("df_rounds must be non-negative")
        if self.coded:
            if self.packet_symbols < 1 or self.block_symbols % self.packet_symbols:
                raise ConfigError("block_symbols must be a multiple of packet_symbols")
            try:
                self.code.info_length(self.packet_symbols * self.ofdm.bits_per_symbol)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.tdi is not None:
            if self.tdi.depth != self.block_symbols:
                raise ConfigError("with TDI, block_symbols must equal the interleaver depth")
            if self.tdi.n_fft != self.ofdm.n_fft:
                raise ConfigError("interleaver n_fft differs from the OFDM n_fft")
            if not self.ofdm.flat:
                # sample interleaving breaks the per-symbol circulant channel
                raise ConfigError("TDI requires a flat channel")
        if self.ofdm.pilot_tones:
            raise ConfigError("pilot tones are not supported by the harness")

    @property
    def noise_tag(self) -> str:
        return self.noise.kind

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # --- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "noise": noise_to_dict(self.noise),
            "snr_db": list(self.snr_points),
            "ofdm": self.ofdm.to_dict(),
            "tdi": None if self.tdi is None else self.tdi.to_dict(),
            "coding": {"enabled": self.coded,
                       "constraint_length": self.code.constraint_length,
                       "generators": [oct(g) for g in self.code.generators],
                       "packet_symbols": self.packet_symbols},
            "block_symbols": self.block_symbols,
            "stopping": {"min_symbols": self.min_symbols, "min_bit_errors": self.min_bit_errors,
                         "max_symbols": self.max_symbols},
            "master_seed": self.master_seed,
            "sbl": self.sbl.to_dict(),
            "decision_feedback": {"rounds": self.df_rounds, "a": self.df_a, "b": self.df_b},
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"estimator", "noise", "snr_db", "ofdm", "tdi", "coding", "block_symbols",
                 "stopping", "master_seed", "sbl", "decision_feedback", "timing"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            kw: dict = {}
            if "estimator" in d:
                kw["estimator"] = str(d["estimator"])
            if "noise" in d:
                kw["noise"] = noise_from_dict(d["noise"])
            if "snr_db" in d:
                snr = d["snr_db"]
                kw["snr_points"] = tuple(snr) if isinstance(snr, (list, tuple)) else (snr,)
            if "ofdm" in d:
                kw["ofdm"] = OfdmConfig.from_dict(d["ofdm"])
            if d.get("tdi") is not None:
                t = dict(d["tdi"])
                t.setdefault("n_fft", kw.get("ofdm", OfdmConfig()).n_fft)
                kw["tdi"] = TdiConfig(**t)
            if "coding" in d:
                c = d["coding"]
                kw["coded"] = bool(c.get("enabled", False))
                gens = tuple(_octal(g) for g in c.get("generators", ("0o133", "0o171")))
                kw["code"] = ConvCode(int(c.get("constraint_length", 7)), gens)
                kw["packet_symbols"] = int(c.get("packet_symbols", 4))
            if "block_symbols" in d:
                kw["block_symbols"] = int(d["block_symbols"])
            elif "tdi" in kw:
                kw["block_symbols"] = kw["tdi"].depth
            for k, v in (d.get("stopping") or {}).items():
                if k not in ("min_symbols", "min_bit_errors", "max_symbols"):
                    raise ConfigError(f"unknown stopping key {k!r}")
                kw[k] = int(v)
            if "master_seed" in d:
                kw["master_seed"] = int(d["master_seed"])
            if "sbl" in d:
                kw["sbl"] = SblSettings.from_dict(d["sbl"])
            if "decision_feedback" in d:
                f = d["decision_feedback"]
                kw["df_rounds"] = int(f.get("rounds", 2))
                kw["df_a"] = float(f.get("a", 0.0))
                kw["df_b"] = float(f.get("b", 0.0))
            if "timing" in d:
                kw["timing"] = bool(d["timing"])
            return cls(**kw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def _octal(g) -> int:
    if isinstance(g, int):
        return g
    s = str(g).strip().lower()
    return int(s[2:] if s.startswith("0o") else s, 8)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_dict(d)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def default_noise(kind: str) -> NoiseModel:
    """Reference model for a noise family name."""
    if kind == "gm":
        return NoiseModel.gm(REFERENCE_GM.weights, REFERENCE_GM.variances)
    if kind == "mca":
        return NoiseModel.mca(REFERENCE_MCA.A, REFERENCE_MCA.omega, REFERENCE_MCA.truncation)
    if kind == "lptv":
        return NoiseModel.lptv(load_lptv())
    if kind == "awgn":
        return NoiseModel.awgn()
    raise ConfigError(f"unknown noise kind {kind!r}")
