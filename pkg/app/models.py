"""
Pydantic models for run configuration, reports and API request/response validation.
"""

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

CaseName = Literal["u1", "u2"]
MethodName = Literal["residual-element", "residual-metric", "hessian-metric", "hierarchical"]
EstimatorNorm = Literal["h1", "l2-hybrid"]
RecoveryName = Literal["zhang-naga", "zz"]
AdaptMode = Literal["residual-h1", "residual-l2-hybrid", "hierarchical-hybrid"]

ALL_METHODS: List[str] = ["residual-element", "residual-metric", "hessian-metric", "hierarchical"]


class AdaptConfig(BaseModel):
    """Parameters of the element-based adaptation driver."""
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(0.125, gt=0, description="Global error target TOL")
    mode: AdaptMode = "residual-h1"
    refine_factor: float = Field(1.5, gt=1, description="Flag elements above factor * TOL^2/N_T")
    sub_loop_repetitions: int = Field(3, ge=1, description="Swap+move repetitions per sub-loop")
    adapt_repetitions: int = Field(1, ge=1, description="Adaptation steps per solve")
    max_iters: int = Field(40, ge=1, description="Maximum outer iterations")
    epsilon: float = Field(0.05, gt=0, description="Relative stopping threshold of the residual quadrature")
    swap_pass_cap: int = Field(50, ge=1, description="Maximum number of full swap passes")
    move_halvings: int = Field(5, ge=0, description="Backtracking halvings of a node move")


class MetricConfig(BaseModel):
    """Parameters of metric construction and unit-mesh remeshing."""
    model_config = ConfigDict(extra="forbid")

    intersection: Literal["intersect", "average"] = "intersect"
    drop_residual_term: bool = False
    min_eig: float = Field(1e-6, gt=0)
    max_eig: float = Field(1e12, gt=0)
    refine_length: float = Field(2.0 ** 0.5, gt=1)
    coarsen_length: float = Field(2.0 ** -0.5, gt=0, lt=1)
    max_sweeps: int = Field(20, ge=1, description="Refinement sweeps per remeshing iteration")

    @model_validator(mode="after")
    def _check_clamps(self) -> "MetricConfig":
        if self.min_eig >= self.max_eig:
            raise ValueError("min_eig must be smaller than max_eig")
        return self


class RunConfig(BaseModel):
    """
    Full configuration of a solve, adaptation or study run.

    Unknown keys are rejected and every numeric knob must be positive.
    """
    model_config = ConfigDict(extra="forbid")

    case: CaseName = "u1"
    alpha: float = Field(100.0, gt=0, description="Wave-front steepness of case u2")
    method: MethodName = "residual-element"
    estimator: EstimatorNorm = Field("h1", description="Norm targeted by residual-element adaptation")
    tol: float = Field(0.125, gt=0, description="Energy-norm TOL of the residual methods")
    l2_tol: float = Field(2e-4, gt=0, description="L2 target of the hierarchical method and the l2-hybrid estimator")
    e_d: float = Field(0.01, gt=0, description="Interpolation error level of the Hessian metric")
    recovery: RecoveryName = "zhang-naga"
    max_iters: int = Field(40, ge=1)
    epsilon: float = Field(0.05, gt=0, description="Subdivided quadrature threshold")
    output_dir: Optional[str] = None
    mesh: Optional[str] = Field(None, description="Initial mesh file (ASCII format)")
    uniform: int = Field(10, ge=1, description="Cells per side of the generated initial mesh")
    pattern: Literal["parallel", "chevron"] = "parallel"
    seed: int = Field(0, ge=0)

    refine_factor: float = Field(1.5, gt=1)
    sub_loop_repetitions: int = Field(3, ge=1)
    adapt_repetitions: int = Field(1, ge=1)

    metric_intersection: Literal["intersect", "average"] = "intersect"
    metric_drop_residual_term: bool = False
    metric_min_eig: float = Field(1e-6, gt=0)
    metric_max_eig: float = Field(1e12, gt=0)

    solver_tol: Optional[float] = Field(None, gt=0)
    solver_maxiter_factor: Optional[int] = Field(None, ge=1)

    stabilize_fraction: float = Field(0.01, gt=0, lt=1, description="Operation share below which a run is stable")
    envelope_iters: int = Field(10, ge=0, description="Extra iterations recorded after stabilisation")
    snapshot_iters: List[int] = Field(default_factory=lambda: [1, 5])

    # study only
    methods: List[MethodName] = Field(default_factory=lambda: list(ALL_METHODS))
    levels: Optional[List[float]] = Field(None, description="Error levels of the study ladder")
    ladder_size: int = Field(4, ge=1)
    parallel: bool = False
    plot: bool = False

    @model_validator(mode="after")
    def _check_levels(self) -> "RunConfig":
        if self.levels is not None and any(x <= 0 for x in self.levels):
            raise ValueError("levels must be positive")
        if self.metric_min_eig >= self.metric_max_eig:
            raise ValueError("metric_min_eig must be smaller than metric_max_eig")
        return self

    def targets_l2(self) -> bool:
        return self.method == "hierarchical" or self.estimator == "l2-hybrid"

    def adapt_mode(self) -> str:
        if self.method == "hierarchical":
            return "hierarchical-hybrid"
        return "residual-l2-hybrid" if self.estimator == "l2-hybrid" else "residual-h1"

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(
            tol=self.l2_tol if self.targets_l2() else self.tol,
            mode=self.adapt_mode(),
            refine_factor=self.refine_factor,
            sub_loop_repetitions=self.sub_loop_repetitions,
            adapt_repetitions=self.adapt_repetitions,
            max_iters=self.max_iters,
            epsilon=self.epsilon,
        )

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            intersection=self.metric_intersection,
            drop_residual_term=self.metric_drop_residual_term,
            min_eig=self.metric_min_eig,
            max_eig=self.metric_max_eig,
        )


class AdaptReportRow(BaseModel):
    """Operation counts and error summary of one outer iteration."""
    iteration: int
    vertices: int
    triangles: int
    refinements: int = 0
    refinements_pct: float = 0.0
    derefinements: int = 0
    derefinements_pct: float = 0.0
    swaps_after_refinement: int = 0
    swaps_after_refinement_pct: float = 0.0
    swaps_after_derefinement: int = 0
    swaps_after_derefinement_pct: float = 0.0
    move_max: float = 0.0
    move_mean: float = 0.0
    estimated_error: float = 0.0
    energy_error: Optional[float] = None
    l2_error: Optional[float] = None
    log_error_std: Optional[float] = None
    subdivision_level2_pct: float = 0.0
    subdivision_level3_pct: float = 0.0

    @property
    def operation_share(self) -> float:
        """Largest operation count relative to its entity count, in percent."""
        return max(self.refinements_pct, self.derefinements_pct,
                   self.swaps_after_refinement_pct, self.swaps_after_derefinement_pct)


class StudyRow(BaseModel):
    """One (method, level) run of a convergence study."""
    method: str
    level: float
    vertices: int
    triangles: int
    energy_error: float
    l2_error: float
    global_ei: Optional[float] = None
    mean_element_h1: float
    std_element_h1: float
    mean_element_l2: float
    std_element_l2: float
    energy_error_min: float
    energy_error_max: float
    iterations: int
    converged: bool
    failed: bool = False
    message: Optional[str] = None
    cpu_seconds: float = Field(0.0, ge=0, description="CPU time of the run in its worker process")


class RunManifest(BaseModel):
    """JSON record of a CLI or job run."""
    command: str
    status: str = Field(..., description="running, completed or failed")
    config: Dict[str, Any]
    versions: Dict[str, str]
    timings: Dict[str, float] = Field(default_factory=dict)
    summary: Optional[Dict[str, Any]] = None
    artifacts: List[str] = Field(default_factory=list)
    error: Optional[str] = None
    started_at: datetime
    finished_at: Optional[datetime] = None


class SolveResponse(BaseModel):
    """Response from the solve endpoint."""
    case: str
    vertices: int
    triangles: int
    energy_error: float
    l2_error: float
    estimated_error: float
    global_ei: Optional[float] = None
    solver_iterations: int


class JobRequest(BaseModel):
    """Request body for submitting a background job."""
    model_config = ConfigDict(extra="forbid")

    command: Literal["adapt", "study"]
    config: Dict[str, Any] = Field(default_factory=dict)


class JobStatusResponse(BaseModel):
    """Response for async job status."""
    job_id: str
    command: str
    status: str = Field(..., description="Job status: queued, processing, completed, failed")
    progress: Optional[int] = Field(None, ge=0, le=100, description="Processing progress percentage")
    message: Optional[str] = Field(None, description="Status message or error details")
    created_at: datetime
    completed_at: Optional[datetime] = None
    result: Optional[dict] = Field(None, description="Run summary when completed")


class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    database: str
    output_dir: str
    versions: Dict[str, str]
    timestamp: datetime
