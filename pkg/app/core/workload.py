"""
Fully-connected workload descriptors.

Descriptor files are JSON ({"layers": [[in, out], ...], "batch": 32, "format": "INT8"});
they are read with yaml.safe_load, so an equivalent YAML file works as well.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.mx_formats import get_format
from app.errors import InvalidInputError

logger = logging.getLogger(__name__)

PUSHER_LAYERS: List[Tuple[int, int]] = [(32, 256), (256, 256), (256, 256), (256, 32)]
PUSHER_BATCHES = (16, 32, 64)


class WorkloadSpec(BaseModel):
    name: str = "custom"
    layer_dims: List[Tuple[int, int]] = Field(alias="layers")
    batch: int = 32
    format: Optional[str] = None

    model_config = {"populate_by_name": True}

    @field_validator("layer_dims")
    @classmethod
    def check_layers(cls, layers: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        if not layers:
            raise ValueError("workload needs at least one layer")
        for i, (fan_in, fan_out) in enumerate(layers):
            if fan_in < 1 or fan_out < 1:
                raise ValueError(f"layer {i} has non-positive dimensions ({fan_in}, {fan_out})")
        for i in range(1, len(layers)):
            if layers[i - 1][1] != layers[i][0]:
                raise ValueError(f"layer {i} input {layers[i][0]} does not match layer {i - 1} output {layers[i - 1][1]}")
        return layers

    @field_validator("batch")
    @classmethod
    def check_batch(cls, batch: int) -> int:
        if batch < 1:
            raise ValueError(f"batch must be positive, got {batch}")
        return batch

    @model_validator(mode="after")
    def check_format(self) -> "WorkloadSpec":
        if self.format is not None:
            get_format(self.format)
        return self

    @property
    def weight_params(self) -> int:
        return sum(i * o for i, o in self.layer_dims)

    @property
    def input_dims(self) -> List[int]:
        return [i for i, _ in self.layer_dims]

    def with_batch(self, batch: int) -> "WorkloadSpec":
        return self.model_copy(update={"batch": batch})


def pusher_workload(batch: int = 32) -> WorkloadSpec:
    """Reference robot-dynamics network: 32-256-256-256-32."""
    return WorkloadSpec(name="pusher", layers=list(PUSHER_LAYERS), batch=batch)


def parse_workload(data: dict) -> WorkloadSpec:
    try:
        return WorkloadSpec.model_validate(data)
    except ValidationError as e:
        raise InvalidInputError(f"invalid workload descriptor: {e.errors()[0]['msg']}") from e


def load_workload(path: "str | Path", batch: Optional[int] = None) -> WorkloadSpec:
    """Read a workload descriptor file; an explicit batch overrides the file's."""
    p = Path(path)
    if not p.is_file():
        raise InvalidInputError(f"workload file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise InvalidInputError(f"workload file {p} is not valid JSON/YAML: {e}") from e
    if not isinstance(data, dict):
        raise InvalidInputError(f"workload file {p} must contain an object")
    data.setdefault("name", p.stem)
    workload = parse_workload(data)
    if batch is not None:
        workload = workload.with_batch(batch)
    logger.info(f"Loaded workload '{workload.name}' with {len(workload.layer_dims)} layers, batch {workload.batch}")
    return workload
