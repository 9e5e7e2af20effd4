"""Closed-form empirical path loss models.

Inputs that fall outside a model's published validity range are clamped to
the nearest bound (frequency, antenna heights) and reported through
:class:`PathLossResult.clamped`. Distance is never clamped: the log-distance
law of each model is extrapolated so that predictions stay monotone in range,
and out-of-range distances are flagged the same way.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .diffraction import SPEED_OF_LIGHT, deygout_loss
from .exceptions import UnsupportedModel
from .raster import Profile

MIN_DISTANCE_M = 1.0


class EmpiricalModelId(str, enum.Enum):
    FSPL = "FSPL"
    COST231_HATA = "COST231_HATA"
    SUI = "SUI"
    TGPP_UMA = "TGPP_UMA"
    SPM = "SPM"


CONSENSUS_MODELS = tuple(EmpiricalModelId)

ENVIRONMENTS = ("urban", "suburban", "rural")

# SUI terrain-category constants (a, b, c)
SUI_TERRAIN = {
    "A": (4.6, 0.0075, 12.6),
    "B": (4.0, 0.0065, 17.1),
    "C": (3.6, 0.005, 20.0),
}
SUI_DEFAULT_CATEGORY = {"urban": "A", "suburban": "B", "rural": "C"}

SPM_DEFAULTS = {"k1": 23.5, "k2": 44.9, "k3": 5.83, "k4": 0.0, "k5": 0.0, "k6": 0.0}

# 3GPP UMa NLOS street width / building height
UMA_STREET_WIDTH = 20.0
UMA_BUILDING_HEIGHT = 20.0


@dataclass(frozen=True)
class LinkBudgetInput:
    freq: float
    d3d: float
    d2d: float
    h_bs_agl: float
    h_ue_agl: float
    environment: str = "suburban"
    terrain_category: Optional[str] = None
    is_los: bool = True
    # feeds the SPM diffraction slot (k4); other models ignore it
    diffraction_db: float = 0.0

    def __post_init__(self):
        if self.freq <= 0:
            raise ValueError("frequency must be positive")
        if self.h_bs_agl <= 0 or self.h_ue_agl <= 0:
            raise ValueError("antenna heights must be positive")
        if self.d2d > self.d3d * (1 + 1e-12):
            raise ValueError("d2d cannot exceed d3d")
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"environment must be one of {ENVIRONMENTS}")

    @property
    def sui_category(self) -> str:
        return self.terrain_category or SUI_DEFAULT_CATEGORY[self.environment]


@dataclass(frozen=True)
class PathLossResult:
    loss_db: float
    clamped: Tuple[str, ...] = ()


class _Clamp:
    def __init__(self):
        self.flags = []

    def __call__(self, name, value, lo, hi):
        if value < lo:
            self.flags.append(f"{name}<{lo:g}")
            return lo
        if value > hi:
            self.flags.append(f"{name}>{hi:g}")
            return hi
        return value

    def flag_range(self, name, value, lo, hi):
        if value < lo or value > hi:
            self.flags.append(f"{name} outside [{lo:g}, {hi:g}]")


def fspl(freq_hz: float, d_m: float) -> float:
    """Free-space loss, 32.45 + 20 log10(f_MHz) + 20 log10(d_km)."""
    d = max(d_m, MIN_DISTANCE_M)
    return 32.45 + 20.0 * math.log10(freq_hz / 1e6) + 20.0 * math.log10(d / 1000.0)


def _cost231_hata(inp: LinkBudgetInput, clamp: _Clamp) -> float:
    f = clamp("f_MHz", inp.freq / 1e6, 1500.0, 2000.0)
    hb = clamp("h_bs", inp.h_bs_agl, 30.0, 200.0)
    hm = clamp("h_ue", inp.h_ue_agl, 1.0, 10.0)
    d_km = max(inp.d3d, MIN_DISTANCE_M) / 1000.0
    clamp.flag_range("d_km", d_km, 1.0, 20.0)
    lf = math.log10(f)
    a_hm = (1.1 * lf - 0.7) * hm - (1.56 * lf - 0.8)
    loss = 46.3 + 33.9 * lf - 13.82 * math.log10(hb) - a_hm + (44.9 - 6.55 * math.log10(hb)) * math.log10(d_km)
    if inp.environment == "urban":
        loss += 3.0
    elif inp.environment == "rural":
        # Hata open-area correction
        loss -= 4.78 * lf**2 - 18.33 * lf + 40.94
    return loss


def _sui(inp: LinkBudgetInput, clamp: _Clamp) -> float:
    cat = inp.sui_category
    if cat not in SUI_TERRAIN:
        raise ValueError(f"unknown SUI terrain category {cat!r}")
    a, b, c = SUI_TERRAIN[cat]
    f_mhz = clamp("f_MHz", inp.freq / 1e6, 1900.0, 11000.0)
    hb = clamp("h_bs", inp.h_bs_agl, 10.0, 80.0)
    hr = clamp("h_ue", inp.h_ue_agl, 1.0, 10.0)
    lam = SPEED_OF_LIGHT / (f_mhz * 1e6)
    d0 = 100.0
    d = max(inp.d3d, MIN_DISTANCE_M)
    gamma = a - b * hb + c / hb
    xf = 6.0 * math.log10(f_mhz / 2000.0)
    xh = (-20.0 if cat == "C" else -10.8) * math.log10(hr / 2.0)
    if d >= d0:
        base = 20.0 * math.log10(4.0 * math.pi * d0 / lam) + 10.0 * gamma * math.log10(d / d0)
    else:
        # free-space segment below the reference distance, continuous at d0
        clamp.flag_range("d_m", d, d0, 1e5)
        base = 20.0 * math.log10(4.0 * math.pi * d / lam)
    return base + xf + xh


def _uma_los(d2d, d3d, fc, hbs, hut):
    d_bp = 4.0 * (hbs - 1.0) * (hut - 1.0) * fc * 1e9 / SPEED_OF_LIGHT
    if d2d <= d_bp:
        return 22.0 * math.log10(d3d) + 28.0 + 20.0 * math.log10(fc)
    return (
        40.0 * math.log10(d3d)
        + 28.0
        + 20.0 * math.log10(fc)
        - 9.0 * math.log10(d_bp**2 + (hbs - hut) ** 2)
    )


def _tgpp_uma(inp: LinkBudgetInput, clamp: _Clamp) -> float:
    fc = clamp("f_GHz", inp.freq / 1e9, 2.0, 6.0)
    hbs = clamp("h_bs", inp.h_bs_agl, 10.0, 150.0)
    hut = clamp("h_ue", inp.h_ue_agl, 1.5, 22.5)
    d2d = max(inp.d2d, MIN_DISTANCE_M)
    clamp.flag_range("d2d", d2d, 10.0, 5000.0)
    d3d = math.hypot(d2d, hbs - hut)
    pl_los = _uma_los(d2d, d3d, fc, hbs, hut)
    if inp.is_los:
        return pl_los
    w, h = UMA_STREET_WIDTH, UMA_BUILDING_HEIGHT
    pl_nlos = (
        161.04
        - 7.1 * math.log10(w)
        + 7.5 * math.log10(h)
        - (24.37 - 3.7 * (h / hbs) ** 2) * math.log10(hbs)
        + (43.42 - 3.1 * math.log10(hbs)) * (math.log10(d3d) - 3.0)
        + 20.0 * math.log10(fc)
        - (3.2 * math.log10(17.625) ** 2 - 4.97)
        - 0.6 * (hut - 1.5)
    )
    return max(pl_los, pl_nlos)


def _spm(inp: LinkBudgetInput, clamp: _Clamp, coeffs: Dict[str, float]) -> float:
    k = dict(SPM_DEFAULTS)
    unknown = set(coeffs or {}) - set(k)
    if unknown:
        raise ValueError(f"unknown SPM coefficients: {sorted(unknown)}")
    k.update(coeffs or {})
    d = max(inp.d3d, MIN_DISTANCE_M)
    log_d = math.log10(d)
    log_h = math.log10(inp.h_bs_agl)
    return (
        k["k1"]
        + k["k2"] * log_d
        + k["k3"] * log_h
        + k["k4"] * inp.diffraction_db
        + k["k5"] * log_d * log_h
        + k["k6"] * inp.h_ue_agl
    )


def evaluate(
    model: EmpiricalModelId,
    inp: LinkBudgetInput,
    spm_coeffs: Optional[Dict[str, float]] = None,
) -> PathLossResult:
    """Median path loss with the list of clamped / extrapolated inputs."""
    try:
        model = EmpiricalModelId(model)
    except ValueError:
        raise UnsupportedModel(f"unknown empirical model {model!r}") from None
    clamp = _Clamp()
    if model is EmpiricalModelId.FSPL:
        loss = fspl(inp.freq, inp.d3d)
    elif model is EmpiricalModelId.COST231_HATA:
        loss = _cost231_hata(inp, clamp)
    elif model is EmpiricalModelId.SUI:
        loss = _sui(inp, clamp)
    elif model is EmpiricalModelId.TGPP_UMA:
        loss = _tgpp_uma(inp, clamp)
    else:
        loss = _spm(inp, clamp, spm_coeffs)
    return PathLossResult(float(loss), tuple(clamp.flags))


def path_loss(model: EmpiricalModelId, inp: LinkBudgetInput, spm_coeffs: Optional[Dict[str, float]] = None) -> float:
    return evaluate(model, inp, spm_coeffs).loss_db


def path_loss_over_profile(
    model: EmpiricalModelId,
    inp: LinkBudgetInput,
    profile: Profile,
    freq: Optional[float] = None,
    spm_coeffs: Optional[Dict[str, float]] = None,
    max_edges: int = 3,
) -> float:
    """Empirical median loss plus Deygout diffraction over ``profile``."""
    freq = inp.freq if freq is None else freq
    diff = deygout_loss(profile, freq, inp.h_bs_agl, inp.h_ue_agl, max_edges)
    return path_loss(model, inp, spm_coeffs) + diff.loss_db
