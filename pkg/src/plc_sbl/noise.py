"""Impulsive noise generators: Gaussian mixture, Middleton Class A, LPTV."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import yaml

from .numerics import sample_circular_gaussian


@dataclass(frozen=True)
class GaussianMixtureParams:
    """Mixture weights and per-component total complex variances."""

    weights: tuple[float, ...]
    variances: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if w.ndim != 1 or w.size == 0 or w.shape != v.shape:
            raise ValueError("weights and variances must be equal-length, non-empty")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be a probability vector, got {self.weights}")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("component variances must be positive and finite")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "variances", tuple(float(x) for x in v))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.weights, self.variances))


@dataclass(frozen=True)
class MiddletonClassAParams:
    A: float
    omega: float
    truncation: int = 10

    def __post_init__(self):
        if self.A <= 0 or self.omega <= 0:
            raise ValueError("Middleton Class A needs A > 0 and omega > 0")
        if self.truncation < 1:
            raise ValueError("truncation must keep at least one component")


@dataclass(frozen=True)
class LptvNoiseParams:
    """Periodic region partition with one FIR shaping filter per region.

    ``regions`` are half-open ``(start, end)`` sample intervals that tile
    ``[0, period)``; ``filters[i]`` shapes the common white drive inside
    region ``i``.
    """

    period: int
    regions: tuple[tuple[int, int], ...]
    filters: tuple[tuple[complex, ...], ...]
    drive_variance: float = 1.0

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be positive")
        regions = tuple((int(a), int(b)) for a, b in self.regions)
        edges = sorted(regions)
        pos = 0
        for a, b in edges:
            if a != pos or b <= a:
                raise ValueError(f"regions must tile [0, {self.period}) without overlap")
            pos = b
        if pos != self.period:
            raise ValueError(f"regions must tile [0, {self.period}) without overlap")
        if len(self.filters) != len(regions):
            raise ValueError("need exactly one filter per region")
        filters = tuple(tuple(complex(c) for c in h) for h in self.filters)
        for h in filters:
            if not h or not np.all(np.isfinite(h)):
                raise ValueError("filters must be non-empty and finite")
        if self.drive_variance <= 0:
            raise ValueError("drive_variance must be positive")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "filters", filters)

    def region_power(self, i: int) -> float:
        return self.drive_variance * float(np.sum(np.abs(self.filters[i]) ** 2))

    def region_index(self) -> np.ndarray:
        """Region label of every sample position within one period."""
        lab = np.empty(self.period, dtype=np.intp)
        for i, (a, b) in enumerate(self.regions):
            lab[a:b] = i
        return lab


@dataclass(frozen=True)
class AwgnParams:
    variance: float = 1.0


@dataclass(frozen=True)
class NoiseModel:
    """Tagged union over the supported noise families."""

    kind: str
    params: Union[GaussianMixtureParams, MiddletonClassAParams, LptvNoiseParams, AwgnParams]

    KINDS = ("gm", "mca", "lptv", "awgn")

    def __post_init__(self):
        expected = {
            "gm": GaussianMixtureParams,
            "mca": MiddletonClassAParams,
            "lptv": LptvNoiseParams,
            "awgn": AwgnParams,
        }
        if self.kind not in expected:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not isinstance(self.params, expected[self.kind]):
            raise TypeError(f"{self.kind} noise needs {expected[self.kind].__name__}")

    @classmethod
    def gm(cls, weights, variances) -> "NoiseModel":
        return cls("gm", GaussianMixtureParams(tuple(weights), tuple(variances)))

    @classmethod
    def mca(cls, A, omega, truncation=10) -> "NoiseModel":
        return cls("mca", MiddletonClassAParams(A, omega, truncation))

    @classmethod
    def awgn(cls) -> "NoiseModel":
        return cls("awgn", AwgnParams())

    @classmethod
    def lptv(cls, params: LptvNoiseParams) -> "NoiseModel":
        return cls("lptv", params)

    @property
    def is_cyclostationary(self) -> bool:
        return self.kind == "lptv"


# Reference scenarios used in the simulations.
REFERENCE_GM = GaussianMixtureParams((0.9, 0.07, 0.03), (1.0, 100.0, 1000.0))
REFERENCE_MCA = MiddletonClassAParams(A=0.1, omega=0.01, truncation=10)


def mca_to_mixture(p: MiddletonClassAParams) -> GaussianMixtureParams:
    """Truncate a Middleton Class A law to its first components.

    Weights e^-A A^k / k! are renormalised over the retained terms; component
    k has variance (k/A + omega) / (1 + omega).
    """
    if p.truncation < 1:
        raise ValueError("truncation must keep at least one component")
    k = np.arange(p.truncation)
    logw = -p.A + k * math.log(p.A) - np.array([math.lgamma(i + 1) for i in k])
    w = np.exp(logw - logw.max())
    w /= w.sum()
    var = (k / p.A + p.omega) / (1.0 + p.omega)
    return GaussianMixtureParams(tuple(w), tuple(var))


def sample_gm(rng: np.random.Generator, p: GaussianMixtureParams, n) -> np.ndarray:
    """i.i.d. Gaussian-mixture samples (component drawn per sample)."""
    shape = (n,) if np.isscalar(n) else tuple(n)
    comp = rng.choice(len(p.weights), size=shape, p=p.weights)
    return sample_circular_gaussian(rng, shape, np.asarray(p.variances)[comp])


def sample_gm_impulses(
    rng: np.random.Generator, p: GaussianMixtureParams, n, background: float = 1.0
) -> np.ndarray:
    """Impulsive part of a mixture whose quietest component is the background.

    The mixture is rescaled so its smallest-variance component has variance
    ``background``. Adding independent CN(0, background) samples to the
    returned vector reproduces the rescaled mixture exactly; samples drawn
    from the quietest component come back as exact zeros.
    """
    shape = (n,) if np.isscalar(n) else tuple(n)
    var = np.asarray(p.variances)
    excess = (var - var.min()) * (background / var.min())
    comp = rng.choice(len(p.weights), size=shape, p=p.weights)
    return sample_circular_gaussian(rng, shape, excess[comp])


def sample_lptv(
    rng: np.random.Generator, p: LptvNoiseParams, n: int, phase: int = 0
) -> np.ndarray:
    """Cyclostationary noise: one white drive, filtered per periodic region.

    Output sample k uses the filter of the region containing
    ``(k + phase) mod period``; all regions filter the same drive sequence so
    the filter memory runs continuously across region boundaries.
    """
    if not 0 <= phase < p.period:
        raise ValueError(f"phase must lie in [0, {p.period})")
    mem = max(len(h) for h in p.filters) - 1
    s = sample_circular_gaussian(rng, n + mem, p.drive_variance)
    lab = p.region_index()[(np.arange(n) + phase) % p.period]
    out = np.zeros(n, dtype=complex)
    for i, h in enumerate(p.filters):
        sel = lab == i
        if not sel.any():
            continue
        full = np.convolve(s, np.asarray(h))[mem : mem + n]
        out[sel] = full[sel]
    return out


def lptv_from_dict(d: dict) -> LptvNoiseParams:
    """Build LPTV parameters from the config-file mapping.

    Region boundaries are given as fractions of the period and rounded to
    whole samples.
    """
    period = int(d["period"])
    regs = d["regions"]
    bounds = []
    for r in regs:
        a = int(round(float(r["start"]) * period))
        b = int(round(float(r["end"]) * period))
        bounds.append((a, b))
    filters = []
    for r in regs:
        h = np.asarray([complex(c) for c in r["filter"]])
        if "power" in r:
            # rescale the filter shape so drive_variance * ||h||^2 hits the power
            h = h * math.sqrt(float(r["power"]) / (float(d.get("drive_variance", 1.0)) * np.sum(np.abs(h) ** 2)))
        filters.append(tuple(h))
    return LptvNoiseParams(period, tuple(bounds), tuple(filters), float(d.get("drive_variance", 1.0)))


def lptv_to_dict(p: LptvNoiseParams) -> dict:
    regions = []
    for (a, b), h in zip(p.regions, p.filters):
        coeffs = [c.real if c.imag == 0 else str(c) for c in h]
        regions.append({"start": a / p.period, "end": b / p.period, "filter": coeffs})
    return {"period": p.period, "drive_variance": p.drive_variance, "regions": regions}


def load_lptv(path: str | Path | None = None, *, period: int | None = None) -> LptvNoiseParams:
    """Read an LPTV parameter file (YAML); the bundled default when no path."""
    if path is None:
        text = resources.files("plc_sbl.data").joinpath("lptv_default.yaml").read_text()
    else:
        text = Path(path).read_text()
    d = yaml.safe_load(text)
    if period is not None:
        d = dict(d, period=period)
    return lptv_from_dict(d)


def noise_from_dict(d: dict) -> NoiseModel:
    kind = d["kind"]
    if kind == "gm":
        return NoiseModel.gm(d.get("weights", REFERENCE_GM.weights), d.get("variances", REFERENCE_GM.variances))
    if kind == "mca":
        return NoiseModel.mca(d.get("A", REFERENCE_MCA.A), d.get("omega", REFERENCE_MCA.omega),
                              int(d.get("truncation", REFERENCE_MCA.truncation)))
    if kind == "lptv":
        if "regions" in d:
            return NoiseModel.lptv(lptv_from_dict(d))
        return NoiseModel.lptv(load_lptv(d.get("file"), period=d.get("period")))
    if kind == "awgn":
        return NoiseModel.awgn()
    raise ValueError(f"unknown noise kind {kind!r}")


def noise_to_dict(m: NoiseModel) -> dict:
    p = m.params
    if m.kind == "gm":
        return {"kind": "gm", "weights": list(p.weights), "variances": list(p.variances)}
    if m.kind == "mca":
        return {"kind": "mca", "A": p.A, "omega": p.omega, "truncation": p.truncation}
    if m.kind == "lptv":
        return {"kind": "lptv", **lptv_to_dict(p)}
    return {"kind": "awgn"}


def impulsive_noise(
    rng: np.random.Generator, model: NoiseModel, n: int, background: float, phase: int = 0
) -> np.ndarray:
    """Impulsive component e for a background AWGN power ``background``.

    Mixture models are referenced to their quietest component. LPTV region
    powers are expressed in units of the background power.
    """
    if model.kind == "awgn":
        return np.zeros(n, dtype=complex)
    if model.kind == "gm":
        return sample_gm_impulses(rng, model.params, n, background)
    if model.kind == "mca":
        return sample_gm_impulses(rng, mca_to_mixture(model.params), n, background)
    return sample_lptv(rng, model.params, n, phase) * math.sqrt(background)
