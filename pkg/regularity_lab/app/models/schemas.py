# regularity_lab/app/models/schemas.py
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator

from regularity_lab.app.core.errors import ConfigError
from regularity_lab.numerics.norms import NormReport


class ExperimentKind(str, Enum):
    FLOW_REGULARITY = "flow_regularity"
    HOLDER = "holder"
    SEMIGROUP = "semigroup"
    TRANSPORT_DECAY = "transport_decay"
    PATCHWORK_GROWTH = "patchwork_growth"
    SCHEDULE_TABLE = "schedule_table"
    EULER_DECAY = "euler_decay"
    EULER_CONSERVATION = "euler_conservation"
    NORM_SELFTEST = "norm_selftest"


class Claim(str, Enum):
    """
    Descriptive labels the report groups verdicts by
    """
    EXACT_FLOW = "exact flow"
    COMPRESSIBILITY = "flow compressibility"
    FLOW_LUSIN = "flow Lusin bound"
    FLOW_SOBOLEV = "flow Sobolev decay"
    HOLDER_FLOW = "Holder flow"
    SEMIGROUP = "flow semigroup"
    TRANSPORT_DECAY = "transport decay"
    FRACTIONAL_DECAY = "fractional decay"
    WEAK_SOLUTION = "weak transport solution"
    MIXING_BLOCK = "mixing block"
    RESCALING = "rescaling identities"
    DISJOINT_SUM = "disjoint-sum bound"
    SCHEDULE = "schedule algebra"
    EULER_PROPAGATION = "Euler propagation"
    EULER_MONITOR = "Euler exponential integrability"
    EULER_CONSERVATION = "Euler conservation"
    NORM_IDENTITIES = "norm identities"


DRIFT_FAMILIES = ("zero", "translation", "shear", "compressible_shear", "log_drift", "smooth_random",
                  "patchwork", "euler_self")
INITIAL_FAMILIES = ("constant", "sin", "cos", "smoothed_indicator", "band_limited", "distance", "vortex_patch",
                    "patchwork")


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    points_per_axis: int = 64
    dim: int = Field(default=2, ge=1, le=2)

    @field_validator("points_per_axis")
    @classmethod
    def power_of_two(cls, n: int) -> int:
        if n < 8 or n & (n - 1):
            raise ValueError(f"must be a power of two >= 8, got {n}")
        return n


class DriftSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: str = "zero"
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("family")
    @classmethod
    def known_family(cls, family: str) -> str:
        if family not in DRIFT_FAMILIES:
            raise ValueError(f"unknown drift family '{family}', expected one of {DRIFT_FAMILIES}")
        return family


class InitialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: str = "constant"
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("family")
    @classmethod
    def known_family(cls, family: str) -> str:
        if family not in INITIAL_FAMILIES:
            raise ValueError(f"unknown initial family '{family}', expected one of {INITIAL_FAMILIES}")
        return family


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol_flow: PositiveFloat = 1e-7
    div_tol: PositiveFloat = 1e-8
    tol_J: PositiveFloat = 1e-2
    mass_tol: PositiveFloat = 1e-6
    advection_tol: PositiveFloat = 1e-2
    interpolation_tol: PositiveFloat = 1e-2
    max_halvings: int = Field(default=8, ge=0)
    cfl: float = Field(default=0.5, gt=0, le=1)
    dt0: PositiveFloat = 1e-2


class ExperimentConfig(BaseModel):
    """
    One experiment run; `params` holds the experiment-specific knobs
    """
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentKind
    grid: GridSpec = Field(default_factory=GridSpec)
    drift: DriftSpec = Field(default_factory=DriftSpec)
    initial: InitialSpec = Field(default_factory=InitialSpec)
    times: List[PositiveFloat] = Field(default_factory=lambda: [1.0], min_length=1)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    output_dir: Optional[Path] = None

    @field_validator("times")
    @classmethod
    def sorted_times(cls, times: List[float]) -> List[float]:
        return sorted(set(times))

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class Verdict(BaseModel):
    claim: Claim
    name: str
    passed: bool
    measured: Optional[float] = None
    bound: Optional[float] = None
    detail: str = ""


class ResultRecord(BaseModel):
    experiment: ExperimentKind
    config_hash: str
    config: Dict[str, Any]
    reports: List[NormReport] = Field(default_factory=list)
    profiles: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    verdicts: List[Verdict] = Field(default_factory=list)
    constants: Dict[str, float] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock: float = 0.0
    record_hash: str = ""

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failures(self) -> List[Verdict]:
        return [v for v in self.verdicts if not v.passed]

    def compute_hash(self) -> str:
        """
        SHA-256 of the canonical JSON of everything but wall-clock
        """
        payload = self.model_dump(mode="json", exclude={"wall_clock", "record_hash"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def config_error(exc: ValidationError, prefix: str = "") -> ConfigError:
    """
    First validation error as a ConfigError with its dotted key path
    """
    first = exc.errors()[0]
    path = ".".join(str(part) for part in first["loc"])
    if prefix:
        path = f"{prefix}.{path}" if path else prefix
    return ConfigError(first["msg"], path)


def load_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise config_error(exc) from exc
