"""Data models for the U-statistics laboratory."""

from decimal import Decimal
from fractions import Fraction
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from src.config import settings

ProcessKind = Literal["doubling-map", "rotation", "iid-uniform", "gaussian-ar1"]
Subcommand = Literal["example1", "example2", "theorem-as", "theorem-l1", "weak-conv", "engine-check"]
ReportFormat = Literal["csv", "json"]


class ExactModel(BaseModel):
    """Base model for records holding exact rationals."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_serializer("*", when_used="json")
    def _serialize_exact(self, value: Any) -> Any:
        if isinstance(value, Fraction):
            return str(value)
        if isinstance(value, int) and not isinstance(value, bool) and abs(value) >= 2**53:
            return str(value)
        return value


class DyadicInterval(BaseModel):
    """The dyadic interval I_{j,l} = [(l-1)/2^j, l/2^j)."""

    model_config = ConfigDict(frozen=True)

    level: int = Field(..., ge=1, description="Level j")
    index: int = Field(..., ge=1, description="Index l, 1 <= l <= 2^j")

    @model_validator(mode="after")
    def _check_index(self) -> "DyadicInterval":
        if self.index > 2**self.level:
            raise ValueError(f"index {self.index} exceeds 2^{self.level}")
        return self

    @property
    def lower(self) -> Fraction:
        return Fraction(self.index - 1, 2**self.level)

    @property
    def upper(self) -> Fraction:
        return Fraction(self.index, 2**self.level)


class ProcessSpec(BaseModel):
    """A stationary ergodic process; JSON form ``{"kind", "rho", "alpha"}``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ProcessKind
    rho: float = Field(default=0.5, description="AR(1) coefficient, |rho| < 1")
    alpha: Decimal = Field(
        default_factory=lambda: Decimal(settings.rotation_alpha), description="Rotation angle in (0, 1)"
    )

    @property
    def marginal(self) -> Literal["uniform", "normal"]:
        """The marginal law F of every observation."""
        return "normal" if self.kind == "gaussian-ar1" else "uniform"

    @property
    def approximate_dynamics(self) -> bool:
        """Rotations use a finite-precision stand-in for an irrational angle."""
        return self.kind == "rotation"

    def label(self) -> str:
        if self.kind == "gaussian-ar1":
            return f"gaussian-ar1(rho={self.rho})"
        if self.kind == "rotation":
            return f"rotation(alpha={self.alpha})"
        return self.kind


class IndexLadder(BaseModel):
    """The interleaved sequences N_1..N_L and N'_0..N'_L.

    JSON form ``{"N": ["2", "8", ...], "Nprime": ["1", "4", ...]}`` with
    integers written as decimal strings.
    """

    model_config = ConfigDict(frozen=True)

    N: List[int] = Field(..., min_length=1, description="N_1..N_L")
    Nprime: List[int] = Field(..., min_length=2, description="N'_0..N'_L")

    @field_validator("N", "Nprime", mode="before")
    @classmethod
    def _parse_decimal_strings(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            parsed = []
            for item in value:
                if isinstance(item, bool) or isinstance(item, float):
                    raise ValueError(f"ladder entries must be integers, got {item!r}")
                parsed.append(int(item))
            return parsed
        return value

    @model_validator(mode="after")
    def _check_lengths(self) -> "IndexLadder":
        if len(self.Nprime) != len(self.N) + 1:
            raise ValueError(f"Nprime must have {len(self.N) + 1} entries (N'_0..N'_L), got {len(self.Nprime)}")
        return self

    @field_serializer("N", "Nprime")
    def _serialize_strings(self, value: List[int]) -> List[str]:
        return [str(item) for item in value]

    @property
    def levels(self) -> int:
        return len(self.N)

    def n_at(self, level: int) -> int:
        """N_level, 1 <= level <= L."""
        return self.N[level - 1]

    def nprime_at(self, level: int) -> int:
        """N'_level, 0 <= level <= L."""
        return self.Nprime[level]


class UStatSeries(BaseModel):
    """Prefix-indexed U-, V- and centered U-statistics of one sample path."""

    kernel: str
    grid: List[int]
    u: List[float]
    v: List[float]
    pair_sums: List[float] = Field(..., description="Raw sums S_n over pairs i < j")
    diagonal_sums: List[float] = Field(..., description="Sums of h(X_i, X_i) for i <= n")
    centered: Optional[List[float]] = None

    def csv_rows(self) -> List[List[Any]]:
        rows = []
        for index, n in enumerate(self.grid):
            centered = "" if self.centered is None else repr(self.centered[index])
            rows.append([n, repr(self.u[index]), repr(self.v[index]), centered])
        return rows


class ExactSum(ExactModel):
    """Closed-form pair count of the lag kernel at prefix length n."""

    n: int
    S: int
    u_norm: Fraction
    paper_norm: Fraction


class ABDecomposition(ExactModel):
    """Split of the normalized sum at N_l into old intervals (A) and the last one (B)."""

    level: int
    A: Fraction
    B: Fraction
    total: Fraction
    A_bound: Fraction = Field(..., description="(N_{l-1} - 1)/(N_l - 1)")
    A_from_first: Fraction = Field(..., description="A with the u = 0 interval left out")
    A_from_first_bound: Fraction = Field(..., description="(N_{l-1} - N_1)/(N_l - 1)")
    B_triangular: Fraction = Field(..., description="Sum of j for j < N_l - N'_{l-1}, normalized")


class OscillationRow(ExactModel):
    """One exact value along the N or N' subsequence."""

    level: int
    n: int
    which: Literal["N", "N'"]
    S: int
    u_norm: Fraction
    paper_norm: Fraction
    bound: Optional[Fraction] = None


class Mismatch(BaseModel):
    """A pair where the orbit-coincidence evaluation disagrees with the lag identity."""

    i: int
    j: int
    k: Optional[int] = None
    window: str
    simulated: int
    expected: int


class SimulationCheck(ExactModel):
    """Comparison of the kernel evaluated from its definition against the closed form."""

    n: int
    seed: int
    guard_digits: int
    pairs: int
    mismatch_count: int
    mismatches: List[Mismatch]
    simulated_sum: int
    exact_sum: int
    u_simulated: Fraction
    u_exact: Fraction

    @property
    def passed(self) -> bool:
        return self.mismatch_count == 0 and self.u_simulated == self.u_exact


class McLeishDiagnostics(ExactModel):
    """Deterministic McLeish quantities of the martingale-difference row n."""

    n: int
    max_abs_radicand: int = Field(..., description="(n-1)^3")
    max_abs_denominator: int = Field(..., description="2 C(n,2)")
    max_abs: float
    max_second_moment: Fraction
    sum_squares: Fraction


class DistributionSummary(BaseModel):
    """Monte-Carlo summary of Y_n."""

    n: int
    M: int
    seed: int
    mean: float
    variance: float
    stderr_mean: float
    ks: float
    ks_sample: int
    histogram_edges: List[float]
    histogram_counts: List[int]
    thresholds: Dict[str, float] = Field(default_factory=dict)


class GapSummary(ExactModel):
    """Monte-Carlo and exact variance of Y_2n - Y_n."""

    n: int
    M: int
    seed: int
    mean: float
    empirical_variance: float
    variance_stderr: float
    exact_variance: float
    closed_form_variance: Fraction
    ks: float
    thresholds: Dict[str, float] = Field(default_factory=dict)


class PrefixCheck(BaseModel):
    """Conditional mean of the next centered digit given a digit prefix."""

    j: int
    pattern: str
    hits: int
    mean: float
    stderr: float
    z: float


class MeanTableRow(BaseModel):
    j: int
    mean_abs: float


class MeanTable(BaseModel):
    """E|h(X_1, X_j)| = a_{j-1}/2 for j = 2 .. j_max."""

    rows: List[MeanTableRow]
    monotone: bool
    bound: float
    first_exceeding: Optional[int] = Field(default=None, description="First j whose mean exceeds the bound")


class ProductIntegral(BaseModel):
    """Monte-Carlo estimate of the double integral of h against F x F."""

    estimate: float
    stderr: float
    reps: int


class ConvergenceExperiment(BaseModel):
    """A kernel, a process and a grid of prefix lengths."""

    model_config = ConfigDict(extra="forbid")

    spec: ProcessSpec
    kernel: str
    kernel_params: Dict[str, float] = Field(default_factory=dict)
    target: Optional[float] = None
    n_grid: List[int]
    reps: int = Field(..., ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    tolerance: float = Field(default=0.05, gt=0)
    required_fraction: float = Field(default=0.95, ge=0, le=1)

    @field_validator("n_grid")
    @classmethod
    def _check_grid(cls, value: List[int]) -> List[int]:
        if not value or value[0] < 2 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("n_grid must be strictly increasing and start at n >= 2")
        return value


class TracePoint(BaseModel):
    replicate: int
    n: int
    u: float
    error: float


class ConvergenceTrace(BaseModel):
    """Per-replicate trajectories of |U_n - target|."""

    experiment: ConvergenceExperiment
    target: float
    points: List[TracePoint]
    fraction_within: float

    @property
    def passed(self) -> bool:
        return self.fraction_within >= self.experiment.required_fraction


class L1Point(BaseModel):
    n: int
    mean_error: float
    stderr: float


class L1Curve(BaseModel):
    """Monte-Carlo estimates of E|U_n - target| along the grid."""

    experiment: ConvergenceExperiment
    target: float
    points: List[L1Point]
    final_is_minimum: bool
    final_within_tolerance: bool

    @property
    def passed(self) -> bool:
        return self.final_is_minimum and self.final_within_tolerance


class PanelRow(BaseModel):
    n: int
    function: str
    value: float


class WeakConvergencePanel(BaseModel):
    """|integral of f_i dF_n| for the trigonometric test family."""

    spec: ProcessSpec
    seed: int
    rows: List[PanelRow]
    max_by_n: Dict[int, float]


class DiagonalGap(BaseModel):
    """|V_n - U_n| against the bound 2B/n of a bounded kernel."""

    n: int
    gap: float
    limit: float
    within: bool


class Assertion(BaseModel):
    """Outcome of one built-in experiment assertion."""

    name: str
    passed: bool
    detail: str = ""


class ExperimentReport(BaseModel):
    """Tabular result of one subcommand plus its summary and assertions."""

    subcommand: str
    columns: List[str]
    rows: List[List[Any]]
    summary: Dict[str, Any] = Field(default_factory=dict)
    assertions: List[Assertion] = Field(default_factory=list)
    extra_tables: Dict[str, List[List[Any]]] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(assertion.passed for assertion in self.assertions)


class RunConfig(BaseModel):
    """A fully specified CLI run; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2**64)
    format: ReportFormat = "csv"
    out: Optional[str] = None
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_parameters(self) -> "RunConfig":
        allowed = ALLOWED_PARAMETERS[self.subcommand]
        unknown = sorted(set(self.parameters) - allowed)
        if unknown:
            raise ValueError(f"unknown parameters for {self.subcommand}: {', '.join(unknown)}")
        return self

    def provenance(self) -> Dict[str, Any]:
        """Config echo that does not depend on thread count or output location."""
        return {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "format": self.format,
            "parameters": {key: self.parameters[key] for key in sorted(self.parameters)},
        }


ALLOWED_PARAMETERS: Dict[str, set] = {
    "example1": {"levels", "ladder_file", "n", "sim_seeds", "guard_digits"},
    "example2": {"n", "reps", "ks_sample", "gap_n", "gap_reps", "mcleish_max"},
    "theorem-as": {"process", "kernel", "kernel_params", "n_grid", "reps", "target", "tolerance"},
    "theorem-l1": {"process", "kernel", "kernel_params", "n_grid", "reps", "target", "tolerance"},
    "weak-conv": {"process", "n_grid", "tolerance"},
    "engine-check": {"n", "kernel", "process"},
}


class LadderValidationReport(BaseModel):
    """Result of checking a ladder file against the ladder invariants."""

    source: str
    levels: int
    valid: bool
    violations: List[str]


class RunManifest(BaseModel):
    """Provenance record written next to every report."""

    tool: str
    tool_version: str
    run_id: str
    config: Dict[str, Any]
    seed: int
    threads: int
    started_at: str
    wall_time_seconds: float
    files: List[str]
    assertions: List[Assertion]
    passed: bool
    failed_assertions: List[str] = Field(default_factory=list)
    error: Optional[Dict[str, Any]] = None
