"""Parametric appliance signatures standing in for recorded datasets.

Each :class:`ToySignatureSpec` describes one appliance category: a current
archetype with its harmonic profile, an amplitude, a transient envelope and a
range of durations. :func:`generate_signatures` draws jittered recordings of
it on a 50 or 60 Hz grid with a slightly distorted sinusoidal voltage,
bracketed by short silences so that region-of-interest extraction has work
to do.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .signal import Signature, Waveform, harmonic_magnitudes


class Archetype(str, enum.Enum):
    RESISTIVE = "Resistive"
    RECTIFIER = "Rectifier"
    MOTOR = "Motor"
    SMPS = "SMPS"


ARCHETYPE_HARMONICS = {
    Archetype.RESISTIVE: {},
    Archetype.RECTIFIER: {3: 0.8, 5: 0.55, 7: 0.3, 9: 0.12},
    Archetype.MOTOR: {3: 0.08, 5: 0.03},
    Archetype.SMPS: {3: 0.9, 5: 0.75, 7: 0.55, 9: 0.35, 11: 0.18},
}
ARCHETYPE_LAG = {  # current lag behind voltage, radians
    Archetype.RESISTIVE: 0.0,
    Archetype.RECTIFIER: 0.0,
    Archetype.MOTOR: 0.65,
    Archetype.SMPS: 0.0,
}
MAINS_PEAK = {50: 325.0, 60: 170.0}


@dataclass(frozen=True)
class Transient:
    inrush: float = 0.0  # extra amplitude at switch-on, multiple of steady state
    tau: float = 0.2  # inrush decay, seconds
    cycle_period: float = 0.0  # on/off cycling period, seconds (0: steady)
    duty: float = 1.0
    cycle_floor: float = 0.0  # relative level during the off part of a cycle
    ripple: float = 0.0  # slow amplitude modulation depth
    ripple_hz: float = 2.0

    def envelope(self, t: np.ndarray) -> np.ndarray:
        env = 1.0 + self.inrush * np.exp(-t / self.tau)
        if self.cycle_period > 0:
            on = (t % self.cycle_period) < self.duty * self.cycle_period
            env = env * np.where(on, 1.0, self.cycle_floor)
        if self.ripple:
            env = env * (1.0 + self.ripple * np.sin(2 * np.pi * self.ripple_hz * t))
        return env


@dataclass(frozen=True)
class ToySignatureSpec:
    label: str
    archetype: Archetype
    amplitude: float  # A RMS in steady state
    harmonics: Mapping[int, float] | None = None  # h -> magnitude relative to fundamental
    transient: Transient = field(default_factory=Transient)
    duration: tuple[float, float] = (2.0, 4.0)
    mains: tuple[int, ...] = (50, 60)
    lag: float | None = None
    voltage_thd: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "archetype", Archetype(self.archetype))
        if not self.amplitude > 0:
            raise ValueError(f"{self.label}: amplitude must be positive")
        if any(m >= 1 for m in self.profile.values()):
            raise ValueError(f"{self.label}: harmonic magnitudes must stay below the fundamental")
        if any(m not in MAINS_PEAK for m in self.mains):
            raise ValueError(f"{self.label}: mains frequency must be 50 or 60 Hz")

    @property
    def profile(self) -> dict[int, float]:
        if self.harmonics is None:
            return dict(ARCHETYPE_HARMONICS[self.archetype])
        return {int(h): float(m) for h, m in self.harmonics.items()}

    @property
    def current_lag(self) -> float:
        return ARCHETYPE_LAG[self.archetype] if self.lag is None else self.lag

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToySignatureSpec":
        d = dict(d)
        if "transient" in d:
            d["transient"] = Transient(**d["transient"])
        for key in ("duration", "mains"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        t = self.transient
        return {"label": self.label, "archetype": self.archetype.value, "amplitude": self.amplitude,
                "harmonics": self.profile, "transient": t.__dict__.copy(),
                "duration": list(self.duration), "mains": list(self.mains),
                "lag": self.current_lag, "voltage_thd": self.voltage_thd}


def synth_voltage(t: np.ndarray, mains: int, thd: float, phase: float) -> np.ndarray:
    w = 2 * np.pi * mains * t + phase
    # 3rd and 5th share the distortion as 0.8 / 0.6, giving THD == thd
    return MAINS_PEAK[mains] * (np.sin(w) + thd * (0.8 * np.sin(3 * w) + 0.6 * np.sin(5 * w)))


def synth_current(t: np.ndarray, mains: int, profile: Mapping[int, float], lag: float,
                  phase: float, amplitude_rms: float) -> np.ndarray:
    """Harmonic sum whose components peak together at the (lagged) voltage crest."""
    w = 2 * np.pi * mains * t + phase - lag - np.pi / 2
    terms = {1: 1.0, **profile}
    scale = amplitude_rms / math.sqrt(0.5 * sum(m * m for m in terms.values()))
    return scale * sum(m * np.cos(h * w) for h, m in terms.items())


def generate_signatures(spec: ToySignatureSpec, n: int, rate: float, seed: int,
                        jitter: float = 0.1, silence: tuple[float, float] = (0.1, 0.4),
                        noise: float = 0.002) -> list[Signature]:
    rng = np.random.default_rng([seed, _label_key(spec.label)])
    out = []
    for k in range(n):
        mains = int(spec.mains[int(rng.integers(len(spec.mains)))])
        active = rng.uniform(*spec.duration)
        lead, trail = rng.uniform(*silence, size=2)
        n_total = int(round((lead + active + trail) * rate))
        t = np.arange(n_total) / rate
        phase = rng.uniform(0, 2 * np.pi)
        amp = spec.amplitude * (1 + jitter * rng.uniform(-1, 1))
        profile = {h: min(m * (1 + jitter * rng.uniform(-1, 1)), 0.99) for h, m in spec.profile.items()}
        voltage = synth_voltage(t, mains, spec.voltage_thd, phase)
        current = synth_current(t, mains, profile, spec.current_lag, phase, amp)
        on = (t >= lead) & (t < lead + active)
        current = np.where(on, current * spec.transient.envelope(np.maximum(t - lead, 0.0)), 0.0)
        current = current + noise * rng.standard_normal(n_total)
        out.append(Signature(spec.label, Waveform(current, rate), Waveform(voltage, rate),
                             f"{spec.label}-{k:04d}"))
    return out


def _label_key(label: str) -> int:
    return int.from_bytes(label.encode()[:16].ljust(16, b"\0"), "little") % (2**63)


def generate_corpus(specs: Iterable[ToySignatureSpec], n_per_label: int, rate: float,
                    seed: int, **kwargs) -> list[Signature]:
    return [s for spec in specs for s in generate_signatures(spec, n_per_label, rate, seed, **kwargs)]


def desk_specs() -> list[ToySignatureSpec]:
    """Eight categories covering all four archetypes with distinct fingerprints."""
    T = Transient
    return [
        ToySignatureSpec("kettle", Archetype.RESISTIVE, 6.0),
        ToySignatureSpec("heater", Archetype.RESISTIVE, 2.5, transient=T(cycle_period=0.5, duty=0.6, cycle_floor=0.3)),
        ToySignatureSpec("fridge", Archetype.MOTOR, 1.5, {3: 0.12}, T(inrush=4.0, tau=0.25), lag=0.8),
        ToySignatureSpec("fan", Archetype.MOTOR, 1.0, {5: 0.2, 7: 0.1}, T(ripple=0.3, ripple_hz=3.0), lag=0.4),
        ToySignatureSpec("laptop", Archetype.SMPS, 0.8),
        ToySignatureSpec("charger", Archetype.RECTIFIER, 1.2, {2: 0.6, 4: 0.3, 6: 0.1}),
        ToySignatureSpec("microwave", Archetype.RECTIFIER, 4.0, {3: 0.5, 5: 0.2},
                         T(cycle_period=0.25, duty=0.5, cycle_floor=0.3)),
        ToySignatureSpec("drill", Archetype.MOTOR, 2.0, {2: 0.25, 3: 0.3, 4: 0.1}, T(inrush=1.5, tau=0.1),
                         lag=0.3),
    ]


def many_specs(n_labels: int, seed: int = 0) -> list[ToySignatureSpec]:
    """``n_labels`` categories with randomized but fixed profiles (for schedule-scale tests)."""
    rng = np.random.default_rng(seed)
    archetypes = list(Archetype)
    specs = []
    for i in range(n_labels):
        arch = archetypes[i % len(archetypes)]
        base = ARCHETYPE_HARMONICS[arch]
        profile = {h: float(np.clip(m * rng.uniform(0.5, 1.2), 0.0, 0.95)) for h, m in base.items()}
        specs.append(ToySignatureSpec(f"appliance{i:02d}", arch, float(rng.uniform(0.3, 8.0)), profile,
                                      duration=(1.5, 3.0)))
    return specs


def odd_harmonic_ratio(x: np.ndarray, rate: float, f0: float, max_h: int = 19) -> float:
    """RMS of the odd harmonics 3..max_h relative to the fundamental."""
    m = harmonic_magnitudes(Waveform(x, rate), f0, max_h)
    return float(np.sqrt(np.sum(m[2::2] ** 2)) / m[0])


def spec_table(specs: Sequence[ToySignatureSpec]) -> list[dict]:
    return [s.to_dict() for s in specs]
