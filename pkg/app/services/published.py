"""
Published reference figures (synthesis results and the Dacapo comparison).

Every value here is published, not computed: energy, area and frequency come
from synthesis, and the Dacapo column comes from its own publication. Reports
carry them as annotations next to the figures this package does compute.
"""

from typing import Dict, List

from pydantic import BaseModel

from app.core.mac_datapath import MacModeKind, MacVariant

PUBLISHED_NOTE = "published, not computed"

ENERGY_COLUMNS = ("INT8", "FP8_E5M2", "FP8_E4M3", "FP6_E3M2", "FP6_E2M3", "FP4_E2M1")


class VariantRow(BaseModel):
    label: str
    variant: str
    freq_mhz: int
    area_um2: float
    energy_pj_per_op: Dict[str, float]
    source: str = PUBLISHED_NOTE


_VARIANT_ROWS = [
    ("mantissa adder extension", "ext", 500, 3281.63, (5.08, 2.4, 2.49, 2.29, 2.51, 0.43)),
    ("normalize inputs", "norm", 417, 3395.00, (6.35, 3.2, 3.38, 3.21, 3.38, 0.67)),
    ("mantissa adder extension + bypass", "ext-bypass", 500, 1589.05, (4.41, 1.11, 1.169, 1.05, 1.13, 0.39)),
]


def variant_table() -> List[VariantRow]:
    """Synthesis results of the three MAC variants, keyed to their functional models."""
    rows = []
    for label, name, freq, area, energy in _VARIANT_ROWS:
        MacVariant.from_name(name)
        rows.append(
            VariantRow(
                label=label,
                variant=name,
                freq_mhz=freq,
                area_um2=area,
                energy_pj_per_op=dict(zip(ENERGY_COLUMNS, energy)),
            )
        )
    return rows


class CoreFigures(BaseModel):
    name: str
    freq_mhz: int
    area_mm2: float
    max_bw_gb_s: float
    memory_kb: float
    mac_count: int
    batch: int
    energy_pj_per_op: Dict[str, str]
    latency_us: Dict[str, float]
    source: str = PUBLISHED_NOTE


OURS_PUBLISHED = CoreFigures(
    name="ours",
    freq_mhz=500,
    area_mm2=6.44,
    max_bw_gb_s=330,
    memory_kb=179.78,
    mac_count=4096,
    batch=32,
    energy_pj_per_op={MacModeKind.INT8.value: "3.20", MacModeKind.FP8FP6.value: "1.87 - 1.88", MacModeKind.FP4.value: "0.43"},
    latency_us={MacModeKind.INT8.value: 10.86, MacModeKind.FP8FP6.value: 4.82, MacModeKind.FP4.value: 3.81},
)

DACAPO_PUBLISHED = CoreFigures(
    name="dacapo",
    freq_mhz=500,
    area_mm2=8.66,
    max_bw_gb_s=640,
    memory_kb=370.13,
    mac_count=4096,
    batch=32,
    energy_pj_per_op={MacModeKind.INT8.value: "3.08", MacModeKind.FP8FP6.value: "1.80", MacModeKind.FP4.value: "0.48"},
    latency_us={MacModeKind.INT8.value: 40.4, MacModeKind.FP8FP6.value: 24.56, MacModeKind.FP4.value: 20.6},
)

# Dacapo's precision paired with each of our modes
DACAPO_COUNTERPART = {
    MacModeKind.INT8: "MX9",
    MacModeKind.FP8FP6: "MX6",
    MacModeKind.FP4: "MX4",
}
