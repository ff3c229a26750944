"""Pydantic documents for scenario input and every JSON artifact the CLI writes."""
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

Matrix = list[list[float]]


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolytopeDoc(_Document):
    """{x : H x ≤ h}; empty lists mean the whole space."""

    H: Matrix = Field(default_factory=list)
    h: list[float] = Field(default_factory=list)


class ModelDoc(_Document):
    name: Optional[str] = None
    a: Matrix
    b: Matrix
    bw: Matrix
    c: Matrix
    d: Matrix = Field(default_factory=list)
    dv: Matrix
    f: list[float]
    g: list[float]
    n_x: int = Field(ge=0)
    n_y: int = Field(ge=0)
    m_u: int = Field(ge=1)
    m_d: int = Field(ge=0)
    x_set: Optional[PolytopeDoc] = None
    y_set: Optional[PolytopeDoc] = None
    d_set: Optional[PolytopeDoc] = None


class SharedSets(_Document):
    x0: PolytopeDoc
    u: PolytopeDoc
    w: PolytopeDoc
    v: PolytopeDoc


class ObjectiveDoc(_Document):
    kind: Literal["one", "inf", "weighted", "delta", "quad"]
    w1: float = 1.0
    w2: float = 0.0


class ScenarioDocument(_Document):
    name: Optional[str] = None
    sampling_time: Optional[float] = Field(default=None, gt=0)
    horizon: int = Field(ge=1)
    epsilon: float
    objective: Union[Literal["one", "inf", "one+2inf", "one+delta", "quad"], ObjectiveDoc] = "one"
    shared_sets: SharedSets
    models: list[ModelDoc] = Field(min_length=1)


# ----------------------------------------------------------------------
# artifacts


class DeltaEntry(BaseModel):
    pair: tuple[int, int]
    delta: float
    passed: bool
    eliminated: Optional[bool] = None


class DesignResultDoc(BaseModel):
    formulation: Literal["exact", "conservative"]
    objective_kind: str
    status: str
    objective: Optional[float]
    u: Optional[list[float]]
    deltas: list[DeltaEntry]
    retained_pairs: list[tuple[int, int]]
    eliminated_pairs: list[tuple[int, int]]
    warnings: list[str]
    verified: Optional[bool]
    solver: dict


class ComparisonDoc(BaseModel):
    exact: Optional[float]
    conservative: Optional[float]
    gap: Optional[float]
    ratio: Optional[float]


class DesignReportDoc(BaseModel):
    scenario: str
    results: list[DesignResultDoc] = Field(min_length=1)
    comparison: Optional[ComparisonDoc] = None


class EliminationDoc(BaseModel):
    scenario: str
    retained: list[tuple[int, int]]
    eliminated: list[tuple[int, int]]


class VerificationDoc(BaseModel):
    success: bool
    epsilon: float
    min_delta: float
    pairs: list[DeltaEntry]


class VerdictEntry(BaseModel):
    t: int = Field(ge=1)
    statuses: list[Literal["Consistent", "Invalidated"]]
    margins: list[Optional[float]]
    identified: Optional[int]
    all_invalidated: bool = False


class ManifestDoc(BaseModel):
    seed: int
    true_model: int
    identified_at: Optional[int]
    final_statuses: list[str]
    created_at: str
    scenario: Optional[str] = None
    epsilon: Optional[float] = None
    horizon: Optional[int] = None
    objective: Optional[float] = None
    deltas: list[DeltaEntry] = Field(default_factory=list)


class ComplexityDoc(BaseModel):
    scenario: str
    inputs: dict[str, int]
    exact: dict[str, dict[str, int]]
    conservative: dict[str, dict[str, int]]


class WindowDoc(_Document):
    """Observation window file: T_w input samples and T_w + 1 output samples."""

    u: Union[Matrix, list[float]]
    z: Union[Matrix, list[float]]


def write_scenario_schema(path):
    """Write the JSON Schema of scenario documents."""
    schema = ScenarioDocument.model_json_schema()
    schema["title"] = "Discrimination scenario"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(schema, indent=2) + "\n")
    return schema
