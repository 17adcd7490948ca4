"""
API endpoints for the MX simulator: formats, quantization, MAC traces,
latency simulation, memory footprint, comparison and training.
"""

import logging
import uuid
from typing import Any, Dict, List, NoReturn, Optional

import numpy as np
from fastapi import APIRouter, BackgroundTasks, HTTPException, Path, Query
from pydantic import BaseModel, Field, field_validator
from starlette.concurrency import run_in_threadpool

from app.api.job_status import create_job, get_job_status, update_job_status
from app.config import get_settings
from app.core.gemm_core import CoreConfig, SimReport, core_summary, simulate_training_iteration
from app.core.mac_datapath import MacMode, MacTrace, MacVariant, run_mac_steps, scripted_operands
from app.core.mx_formats import ALL_FORMATS, get_format
from app.core.mx_quant import get_geometry, get_orientation, quantization_error_stats, quantize_matrix
from app.core.workload import WorkloadSpec, parse_workload, pusher_workload
from app.errors import ContractViolationError, InvalidInputError
from app.services.cost_models import ComparisonReport, FootprintRow, comparison_report, footprint_table
from app.services.train_harness import Activation, TrainConfig, TrainResult, run_training
from app.utils.serialization import format_descriptor, quantized_debug_dump

logger = logging.getLogger(__name__)

router = APIRouter()


def _raise_http(e: Exception, action: str) -> NoReturn:
    """Map simulator errors to HTTP status codes: 400 bad input, 422 contract violation, 500 otherwise."""
    if isinstance(e, InvalidInputError):
        raise HTTPException(status_code=400, detail=str(e)) from e
    if isinstance(e, ContractViolationError):
        raise HTTPException(status_code=422, detail=str(e)) from e
    logger.error(f"Error during {action}: {e}")
    raise HTTPException(status_code=500, detail=f"{action} failed: {e}") from e


def _workload(workload: Optional[Dict[str, Any]], batch: Optional[int]) -> WorkloadSpec:
    spec = parse_workload(workload) if workload is not None else pusher_workload()
    return spec.with_batch(batch) if batch is not None else spec


# Pydantic models for request/response
class QuantizeRequest(BaseModel):
    matrix: List[List[float]]
    format: str
    geometry: str = "square"
    orientation: Optional[str] = None
    include_dump: bool = True


class QuantizeResponse(BaseModel):
    rows: int
    cols: int
    format: str
    geometry: str
    orientation: str
    stats: Dict[str, float]
    dump: Optional[Dict[str, Any]] = None


class MacStep(BaseModel):
    a: List[float]
    b: List[float]
    scale_exp: int = 0


class MacTraceRequest(BaseModel):
    mode: str = "int8"
    format: Optional[str] = None
    variant: str = "ext-bypass"
    codes: bool = False
    steps: List[MacStep] = Field(min_length=1)


class MacTraceResponse(BaseModel):
    accumulator: float
    steps: int
    traces: List[MacTrace]


class SimulateRequest(BaseModel):
    workload: Optional[Dict[str, Any]] = None
    mode: Optional[str] = None
    format: Optional[str] = None
    batch: Optional[int] = Field(default=None, ge=1)
    overlap_writeback: bool = False


class SimulateResponse(BaseModel):
    core: Dict[str, float]
    report: SimReport


class TrainRequest(BaseModel):
    format: Optional[str] = None
    geometry: str = "square"
    epochs: int = Field(default=30, ge=1, le=200)
    iterations_per_epoch: int = Field(default=16, ge=1)
    lr: float = Field(default=0.005, gt=0)
    seed: Optional[int] = None
    activation: Activation = Activation.TANH
    engine: Optional[str] = None
    batch: Optional[int] = Field(default=None, ge=1)
    background: bool = False

    @field_validator("background", mode="before")
    @classmethod
    def convert_string_to_bool(cls, v):
        if isinstance(v, str):
            return v.lower() == "true"
        return v

    @field_validator("format", mode="before")
    @classmethod
    def fp32_means_unquantized(cls, v):
        if isinstance(v, str) and v.lower() == "fp32":
            return None
        return v


@router.get("/formats")
async def list_formats():
    """Descriptors of the six element formats."""
    return [format_descriptor(f) for f in ALL_FORMATS]


@router.post("/quantize", response_model=QuantizeResponse)
async def quantize(request: QuantizeRequest):
    """Quantize a matrix and report the error statistics."""
    try:
        if not request.matrix or len({len(r) for r in request.matrix}) != 1 or not request.matrix[0]:
            raise InvalidInputError("matrix must be non-empty and rectangular")
        matrix = np.array(request.matrix, dtype=np.float64)
        fmt = get_format(request.format)
        geometry = get_geometry(request.geometry)
        orientation = get_orientation(request.orientation) if request.orientation else None
        qm = quantize_matrix(matrix, fmt, geometry, orientation)
        return QuantizeResponse(
            rows=qm.rows,
            cols=qm.cols,
            format=fmt.name.value,
            geometry=str(geometry),
            orientation=qm.orientation.value,
            stats=quantization_error_stats(matrix, qm),
            dump=quantized_debug_dump(qm) if request.include_dump else None,
        )
    except Exception as e:
        _raise_http(e, "Quantization")


@router.post("/mac-trace", response_model=MacTraceResponse)
async def mac_trace(request: MacTraceRequest):
    """Run scripted steps on one MAC and return every step's internal signals."""
    try:
        mode = MacMode.parse(request.mode, request.format)
        variant = MacVariant.from_name(request.variant)
        steps = scripted_operands([s.model_dump() for s in request.steps], mode, as_codes=request.codes)
        state, traces = run_mac_steps(steps, mode, variant)
        return MacTraceResponse(accumulator=state.accumulator, steps=state.steps, traces=traces)
    except Exception as e:
        _raise_http(e, "MAC trace")


@router.post("/simulate", response_model=SimulateResponse)
async def simulate(request: SimulateRequest):
    """Cycle-level latency of one training iteration."""
    try:
        workload = _workload(request.workload, request.batch)
        fmt = request.format or workload.format
        mode = MacMode.parse(request.mode, fmt) if request.mode else MacMode.for_format(fmt or "INT8")
        cfg = CoreConfig(mode=mode, overlap_writeback=request.overlap_writeback, freq_mhz=get_settings().freq_mhz)
        return SimulateResponse(core=core_summary(cfg), report=simulate_training_iteration(cfg, workload))
    except Exception as e:
        _raise_http(e, "Simulation")


@router.get("/footprint", response_model=List[FootprintRow])
async def footprint(batch: int = Query(32, ge=1, description="Training batch size")):
    """FP32 / Dacapo / ours footprint rows for the reference network."""
    try:
        return footprint_table(pusher_workload(batch))
    except Exception as e:
        _raise_http(e, "Footprint")


@router.get("/compare", response_model=ComparisonReport)
async def compare(batch: int = Query(32, ge=1, description="Training batch size")):
    """Simulated latency and footprint next to the published figures."""
    try:
        return comparison_report(pusher_workload(batch))
    except Exception as e:
        _raise_http(e, "Comparison")


async def _run_training_job(job_id: str, config: TrainConfig, workload: WorkloadSpec) -> None:
    await update_job_status(job_id, "running")
    try:
        result = await run_in_threadpool(run_training, config, workload)
        await update_job_status(job_id, "completed", result=result.model_dump(mode="json"))
    except Exception as e:
        logger.error(f"Training job {job_id} failed: {e}")
        await update_job_status(job_id, "failed", error=str(e))


@router.post("/train")
async def train(request: TrainRequest, background_tasks: BackgroundTasks):
    """
    Train the reference network on the synthetic task.
    If background=True, start the run in the background and return a job_id for polling.
    """
    try:
        settings = get_settings()
        config = TrainConfig(
            format=request.format,
            geometry=request.geometry,
            lr=request.lr,
            epochs=request.epochs,
            iterations_per_epoch=request.iterations_per_epoch,
            seed=settings.seed if request.seed is None else request.seed,
            activation=request.activation,
            engine=request.engine or settings.train_engine,
        )
        if config.format is not None:
            get_format(config.format)
        get_geometry(config.geometry)
        workload = pusher_workload(request.batch or 32)
        if request.background:
            job_id = str(uuid.uuid4())
            await create_job(job_id, kind="train")
            background_tasks.add_task(_run_training_job, job_id, config, workload)
            return {"job_id": job_id, "status": "pending"}
        result: TrainResult = await run_in_threadpool(run_training, config, workload)
        return result
    except Exception as e:
        _raise_http(e, "Training")


@router.get("/jobs/{job_id}")
async def job_status(job_id: str = Path(..., description="Job ID to check status for")):
    """
    Poll for background job status/result by job ID.
    """
    job = await get_job_status(job_id)
    if not job:
        raise HTTPException(status_code=404, detail="Job not found")
    return job
