"""Compute-hour normalization, training FLOPs estimation and resource grading.

The tradable unit is the compute hour (CH): one wall-clock hour on the
reference system.  Any other system earns CH in proportion to its measured
FLOPS relative to the reference benchmark.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Optional

from .errors import (
    MissingDeadline,
    NegativeHours,
    NonPositiveReference,
    Overflow,
    ZeroBatch,
)
from .numerics import Number, dec, quantize, round_half_even_int

UINT128_MAX = 2**128 - 1


@dataclass(frozen=True)
class ReferenceSystem:
    """Benchmarked baseline whose performance defines 1 CH per hour."""

    id: str
    reference_performance: Decimal  # FLOPS
    reference_efficiency: Decimal   # FLOPS per watt
    benchmark_suite: str = "synthetic"
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "reference_performance", dec(self.reference_performance))
        object.__setattr__(self, "reference_efficiency", dec(self.reference_efficiency))
        if self.reference_performance <= 0:
            raise NonPositiveReference(
                f"reference_performance must be > 0, got {self.reference_performance}")
        if self.reference_efficiency <= 0:
            raise NonPositiveReference(
                f"reference_efficiency must be > 0, got {self.reference_efficiency}")

    def bumped(self, **changes) -> "ReferenceSystem":
        """Return an updated reference with the version advanced."""
        fields = dict(
            id=self.id,
            reference_performance=self.reference_performance,
            reference_efficiency=self.reference_efficiency,
            benchmark_suite=self.benchmark_suite,
            version=self.version + 1,
        )
        fields.update(changes)
        return ReferenceSystem(**fields)


@dataclass(frozen=True)
class SystemProfile:
    """Benchmark results and reliability metrics for one provider system."""

    provider_id: str
    measured_performance: Decimal        # FLOPS
    uptime_pct: Decimal = Decimal(100)   # [0, 100]
    measured_power: Optional[Decimal] = None  # watts
    mtbf_hours: Optional[Decimal] = None
    mttr_hours: Optional[Decimal] = None
    utilization_pct: Optional[Decimal] = None

    def __post_init__(self):
        object.__setattr__(self, "measured_performance", dec(self.measured_performance))
        object.__setattr__(self, "uptime_pct", dec(self.uptime_pct))
        for name in ("measured_power", "mtbf_hours", "mttr_hours", "utilization_pct"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, dec(value))
        if self.measured_performance < 0:
            raise ValueError("measured_performance must be >= 0")
        if not (0 <= self.uptime_pct <= 100):
            raise ValueError(f"uptime_pct out of [0, 100]: {self.uptime_pct}")
        if self.measured_power is not None and self.measured_power <= 0:
            raise ValueError("measured_power must be > 0 when present")
        for name in ("mtbf_hours", "mttr_hours"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True, order=True)
class ComputeHours:
    """Exact decimal CH quantity, 6 fractional digits, never negative."""

    value: Decimal

    def __post_init__(self):
        object.__setattr__(self, "value", quantize(self.value))
        if self.value < 0:
            raise ValueError(f"compute hours cannot be negative: {self.value}")

    def __add__(self, other: "ComputeHours") -> "ComputeHours":
        return ComputeHours(self.value + other.value)

    def __sub__(self, other: "ComputeHours") -> "ComputeHours":
        return ComputeHours(self.value - other.value)

    def __str__(self) -> str:
        return f"{self.value} CH"


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape of one convolutional layer, all dimensions >= 1."""

    input_height: int
    input_width: int
    input_channels: int
    output_channels: int
    kernel_height: int
    kernel_width: int
    output_height: int
    output_width: int

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class TrainingJobSpec:
    """Inputs for estimating the total FLOPs of a training run."""

    model_flops_per_forward: int
    dataset_samples: int
    batch_size: int
    epochs: int
    deadline_hours: Optional[Decimal] = None

    def __post_init__(self):
        if self.model_flops_per_forward <= 0:
            raise ValueError("model_flops_per_forward must be > 0")
        if self.dataset_samples < 0 or self.epochs < 0:
            raise ValueError("counts must be non-negative")
        if self.batch_size < 1:
            raise ZeroBatch("batch_size must be >= 1")
        if self.deadline_hours is not None:
            object.__setattr__(self, "deadline_hours", dec(self.deadline_hours))
            if self.deadline_hours <= 0:
                raise ValueError("deadline_hours must be > 0 when present")


class PerformanceGrade(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"


class ReliabilityGrade(enum.IntEnum):
    G1 = 1
    G2 = 2
    G3 = 3
    G4 = 4


class EnergyGrade(enum.Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


# Rank within each axis, higher is better; used for floor comparisons.
_PERF_RANK = {PerformanceGrade.A: 4, PerformanceGrade.B: 3,
              PerformanceGrade.C: 2, PerformanceGrade.D: 1}
_REL_RANK = {ReliabilityGrade.G1: 4, ReliabilityGrade.G2: 3,
             ReliabilityGrade.G3: 2, ReliabilityGrade.G4: 1}
_ENERGY_RANK = {EnergyGrade.X: 3, EnergyGrade.Y: 2, EnergyGrade.Z: 1}


@dataclass(frozen=True)
class GradeTriple:
    """Composite quality grade: performance tier, uptime band, energy tier."""

    performance: PerformanceGrade
    reliability: ReliabilityGrade
    energy: EnergyGrade
    energy_defaulted: bool = False  # True when no power reading was available

    def meets_floor(self, floor: "GradeTriple") -> bool:
        """Every axis at least as good as the floor's."""
        return (_PERF_RANK[self.performance] >= _PERF_RANK[floor.performance]
                and _REL_RANK[self.reliability] >= _REL_RANK[floor.reliability]
                and _ENERGY_RANK[self.energy] >= _ENERGY_RANK[floor.energy])

    def __str__(self) -> str:
        return f"{self.performance.value}{self.reliability.value}{self.energy.value}"

    @classmethod
    def parse(cls, text: str) -> "GradeTriple":
        """Parse a compact grade like ``B2Y``."""
        if len(text) != 3:
            raise ValueError(f"grade must be 3 characters, got {text!r}")
        return cls(PerformanceGrade(text[0]), ReliabilityGrade(int(text[1])),
                   EnergyGrade(text[2].upper()))


@dataclass(frozen=True)
class GradeThresholds:
    """Numeric band boundaries for the three grade axes.

    Reliability bands: 1 above 99.9, 2 in [99.0, 99.9], 3 in [95.0, 99.0),
    4 below 95.0.  Performance and energy bands compare ratios against the
    reference system.
    """

    perf_a: Decimal = Decimal("1.5")
    perf_b: Decimal = Decimal("1.1")
    perf_c: Decimal = Decimal("0.9")
    rel_1: Decimal = Decimal("99.9")
    rel_2: Decimal = Decimal("99.0")
    rel_3: Decimal = Decimal("95.0")
    energy_x: Decimal = Decimal("1.25")
    energy_y: Decimal = Decimal("0.75")


DEFAULT_THRESHOLDS = GradeThresholds()


class FlopsMode(enum.Enum):
    """Conv-layer FLOPs accounting variants.

    STANDARD counts two ops (multiply + add) per MAC over the output
    feature map.  INPUT_SCALED additionally multiplies by the input
    spatial extent, matching formulations that fold the input plane into
    the per-layer count.
    """

    STANDARD = "standard"
    INPUT_SCALED = "input-scaled"


def compute_hours(profile: SystemProfile, ref: ReferenceSystem,
                  operational_hours: Number) -> ComputeHours:
    """Normalize a system's work over a period into compute hours.

    CH = measured_performance / reference_performance * operational_hours,
    rounded half-even to 6 fractional digits.
    """
    hours = dec(operational_hours)
    if hours < 0:
        raise NegativeHours(f"operational_hours must be >= 0, got {hours}")
    if ref.reference_performance <= 0:
        raise NonPositiveReference("reference performance must be > 0")
    raw = profile.measured_performance / ref.reference_performance * hours
    return ComputeHours(raw)


def compute_hours_for_rate(rate_flops: Decimal, ref: ReferenceSystem,
                           operational_hours: Number) -> ComputeHours:
    """CH earned by a raw FLOPS rate (no profile needed)."""
    profile = SystemProfile(provider_id="<rate>", measured_performance=rate_flops)
    return compute_hours(profile, ref, operational_hours)


def conv_layer_flops(layer: ConvLayerSpec,
                     mode: FlopsMode = FlopsMode.STANDARD) -> int:
    """FLOPs for one forward pass of a convolutional layer."""
    flops = (2 * layer.kernel_height * layer.kernel_width * layer.input_channels
             * layer.output_channels * layer.output_height * layer.output_width)
    if mode is FlopsMode.INPUT_SCALED:
        flops *= layer.input_height * layer.input_width
    if flops > UINT128_MAX:
        raise Overflow(f"conv FLOPs {flops} exceeds 128-bit unsigned range")
    return flops


def training_flops(job: TrainingJobSpec) -> int:
    """Total FLOPs for a training run.

    model_flops_per_forward * (dataset_samples / batch_size) * epochs with
    the iteration count kept as an exact rational; the final product rounds
    half-even to an integer.
    """
    if job.batch_size == 0:
        raise ZeroBatch("batch_size must be >= 1")
    iterations = Fraction(job.dataset_samples, job.batch_size)
    total = Fraction(job.model_flops_per_forward) * iterations * job.epochs
    return round_half_even_int(total)


def required_rate(job: TrainingJobSpec,
                  ref: ReferenceSystem) -> tuple[Decimal, ComputeHours]:
    """FLOPS rate needed to finish the job by its deadline, and the CH cost.

    The rate is total FLOPs over the deadline in seconds; the CH quantity
    is that rate normalized against the reference over the deadline.
    """
    if job.deadline_hours is None:
        raise MissingDeadline("job has no deadline_hours")
    total = training_flops(job)
    seconds = job.deadline_hours * 3600
    rate = dec(total) / seconds
    ch = compute_hours_for_rate(rate, ref, job.deadline_hours)
    return rate, ch


def grade(profile: SystemProfile, ref: ReferenceSystem,
          thresholds: GradeThresholds = DEFAULT_THRESHOLDS) -> GradeTriple:
    """Grade a system against the reference on all three axes."""
    uptime = profile.uptime_pct
    if uptime > thresholds.rel_1:
        reliability = ReliabilityGrade.G1
    elif uptime >= thresholds.rel_2:
        reliability = ReliabilityGrade.G2
    elif uptime >= thresholds.rel_3:
        reliability = ReliabilityGrade.G3
    else:
        reliability = ReliabilityGrade.G4

    ratio = profile.measured_performance / ref.reference_performance
    if ratio >= thresholds.perf_a:
        performance = PerformanceGrade.A
    elif ratio >= thresholds.perf_b:
        performance = PerformanceGrade.B
    elif ratio >= thresholds.perf_c:
        performance = PerformanceGrade.C
    else:
        performance = PerformanceGrade.D

    if profile.measured_power is None:
        return GradeTriple(performance, reliability, EnergyGrade.Z,
                           energy_defaulted=True)
    efficiency = (profile.measured_performance / profile.measured_power
                  / ref.reference_efficiency)
    if efficiency >= thresholds.energy_x:
        energy = EnergyGrade.X
    elif efficiency >= thresholds.energy_y:
        energy = EnergyGrade.Y
    else:
        energy = EnergyGrade.Z
    return GradeTriple(performance, reliability, energy)
