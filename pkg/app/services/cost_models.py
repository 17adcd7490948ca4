"""
Analytical training-memory footprint and the ours-vs-Dacapo comparison.

Footprint accounting (1 KB = 1024 bytes):
- W:    all weights at the policy's bits per element
- Wt:   a second, transposed weight copy (vector blocks only)
- At:   every layer input kept for the weight-gradient pass, times batch
- A:    a quantized inference-activation copy of the widest layer input
- Erow: row-blocked errors of the widest layer output (Dacapo reuses A for it)
- Ecol: column-blocked copy of the same errors (vector blocks only)

Display values round half-up to 0.1 KB; displayed totals are sums of the
displayed components and the ratio column is computed from displayed totals.
"""

import logging
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel

from app.core.gemm_core import CoreConfig, simulate_training_iteration
from app.core.mac_datapath import MacModeKind, get_mode_kind
from app.core.mx_formats import FP4_E2M1, FP8_E4M3, INT8, ElementFormat, get_format
from app.core.mx_quant import SQUARE_DIM
from app.core.workload import WorkloadSpec
from app.services.published import (
    DACAPO_COUNTERPART,
    DACAPO_PUBLISHED,
    OURS_PUBLISHED,
    PUBLISHED_NOTE,
    VariantRow,
    variant_table,
)

logger = logging.getLogger(__name__)

BITS_PER_KB = 8 * 1024
COMPONENTS = ("W", "A", "Wt", "At", "Erow", "Ecol")
DISPLAY_QUANTUM = Decimal("0.1")

# representative element format per MAC mode for reports
MODE_REPORT_FORMATS = {
    MacModeKind.INT8: INT8,
    MacModeKind.FP8FP6: FP8_E4M3,
    MacModeKind.FP4: FP4_E2M1,
}


class PolicyName(str, Enum):
    FP32_BASELINE = "Fp32Baseline"
    DACAPO_VECTOR = "DacapoVector"
    OURS_SQUARE = "OursSquare"


class StoragePolicy(BaseModel):
    name: PolicyName
    label: str
    bits_per_element: Fraction
    stores_transposed_weights: bool
    stores_inference_act_copy: bool
    reuses_act_for_row_errors: bool

    model_config = {"arbitrary_types_allowed": True, "frozen": True}


FP32_BASELINE = StoragePolicy(
    name=PolicyName.FP32_BASELINE,
    label="FP32",
    bits_per_element=Fraction(32),
    stores_transposed_weights=False,
    stores_inference_act_copy=False,
    reuses_act_for_row_errors=False,
)


def mx9_bits_per_element() -> Fraction:
    """8-bit elements, one 8-bit exponent per 16, one micro-exponent bit per pair."""
    return Fraction(8) + Fraction(8, 16) + Fraction(1, 2)


def dacapo_policy(element_bits: int = 9) -> StoragePolicy:
    """
    Dacapo's vector-block formats: 16-element blocks with an 8-bit shared exponent.

    MX9 is 8 + 8/16 + 1/2 (micro-exponents) = 9 bits per element; MX6 and MX4
    averages are configurable and default to 6 and 4.
    """
    return StoragePolicy(
        name=PolicyName.DACAPO_VECTOR,
        label=f"Dacapo MX{element_bits}",
        bits_per_element=mx9_bits_per_element() if element_bits == 9 else Fraction(element_bits),
        stores_transposed_weights=True,
        stores_inference_act_copy=True,
        reuses_act_for_row_errors=True,
    )


def square_policy(fmt: "str | ElementFormat" = INT8) -> StoragePolicy:
    """Square 8x8 blocks: element bits plus one 8-bit scale per 64 elements."""
    fmt = get_format(fmt)
    return StoragePolicy(
        name=PolicyName.OURS_SQUARE,
        label=f"Ours MX{fmt.name.value}",
        bits_per_element=Fraction(fmt.total_bits) + Fraction(8, SQUARE_DIM * SQUARE_DIM),
        stores_transposed_weights=False,
        stores_inference_act_copy=False,
        reuses_act_for_row_errors=False,
    )


class FootprintRow(BaseModel):
    policy: str
    label: str
    batch: int
    W: float
    A: float
    Wt: float
    At: float
    Erow: float
    Ecol: float
    total: float
    display: Dict[str, float]
    display_total: float
    ratio_vs_fp32: float
    row_errors_reuse_act: bool = False


def round_display(kb: float) -> float:
    """Round half-up to 0.1 KB (KB values are dyadic, so Decimal(kb) is exact)."""
    return float(Decimal(kb).quantize(DISPLAY_QUANTUM, rounding=ROUND_HALF_UP))


def _kb(bits: Fraction) -> float:
    return float(bits / BITS_PER_KB)


def _components(policy: StoragePolicy, workload: WorkloadSpec) -> Dict[str, float]:
    bpe = policy.bits_per_element
    batch = workload.batch
    widest_input = max(workload.input_dims)
    widest_error = max(o for _, o in workload.layer_dims)
    w = _kb(workload.weight_params * bpe)
    errors = _kb(widest_error * batch * bpe)
    return {
        "W": w,
        "A": _kb(widest_input * batch * bpe) if policy.stores_inference_act_copy else 0.0,
        "Wt": w if policy.stores_transposed_weights else 0.0,
        "At": _kb(sum(workload.input_dims) * batch * bpe),
        "Erow": 0.0 if policy.reuses_act_for_row_errors else errors,
        "Ecol": errors if policy.stores_transposed_weights else 0.0,
    }


def _display_total(components: Dict[str, float]) -> float:
    display = [Decimal(round_display(v)).quantize(DISPLAY_QUANTUM) for v in components.values()]
    return float(sum(display, Decimal(0)))


def footprint(policy: StoragePolicy, workload: WorkloadSpec) -> FootprintRow:
    """
    Training-memory footprint of a fully-connected workload under a storage policy.

    Args:
        policy: how weights, activations and errors are stored
        workload: layer dims and batch

    Returns:
        FootprintRow with exact KB values, display values and the ratio to FP32
    """
    components = _components(policy, workload)
    display_total = _display_total(components)
    baseline_total = _display_total(_components(FP32_BASELINE, workload))
    ratio = float(
        (Decimal(baseline_total) / Decimal(display_total)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    ) if display_total else 0.0
    return FootprintRow(
        policy=policy.name.value,
        label=policy.label,
        batch=workload.batch,
        total=sum(components.values()),
        display={k: round_display(v) for k, v in components.items()},
        display_total=display_total,
        ratio_vs_fp32=ratio,
        row_errors_reuse_act=policy.reuses_act_for_row_errors,
        **components,
    )


def footprint_table(workload: WorkloadSpec, policies: Optional[Sequence[StoragePolicy]] = None) -> List[FootprintRow]:
    """FP32 / Dacapo MX9 / ours MXINT8 rows unless other policies are given."""
    policies = policies or (FP32_BASELINE, dacapo_policy(9), square_policy(INT8))
    rows = [footprint(p, workload) for p in policies]
    logger.info(
        f"Footprint for batch {workload.batch}: "
        + ", ".join(f"{r.label} {r.display_total:.1f} KB" for r in rows)
    )
    return rows


class ModeComparison(BaseModel):
    mode: str
    format: str
    dacapo_precision: str
    latency_us: float
    total_cycles: int
    published_latency_us: float
    dacapo_latency_us: float
    speedup_vs_dacapo: float
    memory_kb: float
    energy_pj_per_op: str
    dacapo_energy_pj_per_op: str


class ComparisonReport(BaseModel):
    batch: int
    freq_mhz: int
    mac_count: int
    bandwidth_gb_s: float
    memory_kb: float
    dacapo_memory_kb: float
    memory_ratio: float
    bandwidth_ratio: float
    area_ratio: float
    area_mm2: float
    dacapo_area_mm2: float
    dacapo_bandwidth_gb_s: float
    modes: List[ModeComparison]
    variants: List[VariantRow]
    published_note: str = PUBLISHED_NOTE


def comparison_report(workload: WorkloadSpec, modes: Optional[Sequence["str | MacModeKind"]] = None) -> ComparisonReport:
    """
    Our simulated latency and computed footprint next to the published figures.

    Memory ratio uses exact totals (MX9 vector vs square MXINT8); bandwidth and
    area ratios divide Dacapo's published values by ours.
    """
    kinds = [get_mode_kind(m) for m in (modes or list(MacModeKind))]
    ours = footprint(square_policy(INT8), workload)
    dacapo = footprint(dacapo_policy(9), workload)
    entries = []
    core = None
    for kind in kinds:
        fmt = MODE_REPORT_FORMATS[kind]
        core = CoreConfig.for_format(fmt)
        sim = simulate_training_iteration(core, workload)
        dacapo_latency = DACAPO_PUBLISHED.latency_us[kind.value]
        entries.append(
            ModeComparison(
                mode=kind.value,
                format=str(fmt),
                dacapo_precision=DACAPO_COUNTERPART[kind],
                latency_us=sim.latency_us,
                total_cycles=sim.total_cycles,
                published_latency_us=OURS_PUBLISHED.latency_us[kind.value],
                dacapo_latency_us=dacapo_latency,
                speedup_vs_dacapo=dacapo_latency / sim.latency_us if sim.latency_us else 0.0,
                memory_kb=footprint(square_policy(fmt), workload).total,
                energy_pj_per_op=OURS_PUBLISHED.energy_pj_per_op[kind.value],
                dacapo_energy_pj_per_op=DACAPO_PUBLISHED.energy_pj_per_op[kind.value],
            )
        )
    core = core or CoreConfig.for_format(INT8)
    return ComparisonReport(
        batch=workload.batch,
        freq_mhz=core.freq_mhz,
        mac_count=core.mac_count,
        bandwidth_gb_s=core.bandwidth_gb_s,
        memory_kb=ours.total,
        dacapo_memory_kb=dacapo.total,
        memory_ratio=dacapo.total / ours.total,
        bandwidth_ratio=DACAPO_PUBLISHED.max_bw_gb_s / core.bandwidth_gb_s,
        area_ratio=DACAPO_PUBLISHED.area_mm2 / OURS_PUBLISHED.area_mm2,
        area_mm2=OURS_PUBLISHED.area_mm2,
        dacapo_area_mm2=DACAPO_PUBLISHED.area_mm2,
        dacapo_bandwidth_gb_s=DACAPO_PUBLISHED.max_bw_gb_s,
        modes=entries,
        variants=variant_table(),
    )
