"""Pydantic schemas for the mechanism description file and experiment configs."""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = List[float]


class BodyModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: int
    mass: float = Field(gt=0, alias="m")
    inertia: List[List[float]] = Field(default=[[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]], alias="J")


class JointModel(BaseModel):
    id: int
    kind: Literal["revolute", "spherical", "prismatic", "fixed", "floating"]
    parent: Optional[Union[int, Literal["world"]]] = None
    child: int
    parent_anchor: Vec3 = [0.0, 0.0, 0.0]
    child_anchor: Vec3 = [0.0, 0.0, 0.0]
    axis: Vec3 = [0.0, 0.0, 1.0]

    @field_validator("parent")
    @classmethod
    def _world(cls, v):
        return None if v == "world" else v


class ContactModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: int
    body: int
    offset: Vec3 = [0.0, 0.0, 0.0]
    radius: float = Field(default=0.0, ge=0)
    friction: float = Field(default=0.5, ge=0, alias="c_f")
    surface_normal: Vec3 = [0.0, 0.0, 1.0]
    surface_offset: float = 0.0
    cone_mode: Literal["nonlinear", "linearized"] = "nonlinear"
    sphere_center: Optional[Vec3] = None
    sphere_radius: float = Field(default=0.0, ge=0)


class MechanismFile(BaseModel):
    bodies: List[BodyModel]
    joints: List[JointModel] = []
    contacts: List[ContactModel] = []
    gravity: Vec3 = [0.0, 0.0, -9.81]
    timestep: float = Field(default=0.01, gt=0)


class ScenarioConfig(BaseModel):
    """One experiment run.  Unused fields are ignored by scenarios that do not need them."""

    scenario: Literal["box_drop", "box_slide", "chain_float", "grad_sweep", "sysid"]
    mechanism_file: Optional[Path] = None
    h: float = Field(default=0.01, gt=0)
    T: int = Field(default=100, ge=1)
    seed: int = 0
    cone_mode: Literal["nonlinear", "linearized"] = "nonlinear"
    output_dir: Path = Path("out")

    r_tol: float = Field(default=1e-5, gt=0)
    kappa_tol: float = Field(default=1e-5, gt=0)

    # box_drop
    drop_height: float = Field(default=1.0, ge=0)
    drop_duration: float = Field(default=2.0, gt=0)
    timesteps: List[float] = [0.1, 0.01]
    # box_slide
    slide_speed: float = 2.0
    heading: float = 0.7853981633974483
    slide_duration: float = 1.0
    friction: float = 0.5
    # chain_float
    chain_links: int = 3
    actuation_time: float = 1.0
    coast_time: float = 10.0
    actuation_max: float = 0.05
    chain_timesteps: List[float] = [0.1, 0.01, 0.001]
    # grad_sweep
    force_min: float = 0.0
    force_max: float = 20.0
    force_samples: int = 41
    kappas: List[float] = [1e-2, 1e-3, 3e-4]
    # sysid / gen-data
    n_traj: int = Field(default=50, ge=1)
    traj_steps: int = Field(default=25, ge=3)
    sysid_h: float = Field(default=0.02, gt=0)
    noise_std: float = Field(default=0.0, ge=0)
    dataset_file: Optional[Path] = None
    true_friction: float = 0.3
    box_half_extents: Vec3 = [0.1, 0.1, 0.1]
    perturbation: float = 0.2
    max_gn_iters: int = 20
    kappa_grad: float = 3e-4
    weights: Optional[List[float]] = None
    initial_friction: Optional[float] = Field(default=None, gt=0)
    initial_vertices: Optional[List[Vec3]] = None

    @model_validator(mode="after")
    def _files_exist(self):
        if self.initial_vertices is not None and len(self.initial_vertices) != 8:
            raise ValueError("initial_vertices must list 8 points")
        if self.mechanism_file is not None and not Path(self.mechanism_file).exists():
            raise ValueError(f"mechanism file {self.mechanism_file} does not exist")
        return self


def load_scenario_config(path) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(Path(path).read_text())
