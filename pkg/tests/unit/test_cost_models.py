"""
Test the footprint model and the ours-vs-Dacapo comparison.
"""

from fractions import Fraction

import pytest

from app.core.mac_datapath import MacModeKind
from app.core.mx_formats import FP4_E2M1, INT8
from app.core.workload import pusher_workload
from app.services.cost_models import (
    FP32_BASELINE,
    comparison_report,
    dacapo_policy,
    footprint,
    footprint_table,
    mx9_bits_per_element,
    round_display,
    square_policy,
)


def test_bits_per_element():
    assert mx9_bits_per_element() == 9
    assert square_policy(INT8).bits_per_element == Fraction(65, 8)
    assert square_policy(FP4_E2M1).bits_per_element == Fraction(33, 8)
    assert dacapo_policy(6).bits_per_element == 6
    assert FP32_BASELINE.bits_per_element == 32


def test_round_display_is_half_up():
    assert round_display(146.25) == 146.3
    assert round_display(28.125) == 28.1
    assert round_display(8.125) == 8.1
    assert round_display(14.0625) == 14.1
    assert round_display(56.25) == 56.3


def test_batch32_components(pusher):
    fp32, dacapo, ours = footprint_table(pusher)
    assert fp32.display == {"W": 576.0, "A": 0.0, "Wt": 0.0, "At": 100.0, "Erow": 32.0, "Ecol": 0.0}
    assert dacapo.display == {"W": 162.0, "A": 9.0, "Wt": 162.0, "At": 28.1, "Erow": 0.0, "Ecol": 9.0}
    assert dacapo.row_errors_reuse_act is True
    assert ours.display == {"W": 146.3, "A": 0.0, "Wt": 0.0, "At": 25.4, "Erow": 8.1, "Ecol": 0.0}
    assert ours.total == 179.765625
    assert dacapo.total == 370.125


@pytest.mark.parametrize(
    "batch,totals,ratios",
    [
        (16, (642.0, 347.1, 163.1), (1.0, 1.85, 3.94)),
        (32, (708.0, 370.1, 179.8), (1.0, 1.91, 3.94)),
        (64, (840.0, 416.3, 213.4), (1.0, 2.02, 3.94)),
    ],
)
def test_footprint_table(batch, totals, ratios):
    rows = footprint_table(pusher_workload(batch))
    assert tuple(r.display_total for r in rows) == pytest.approx(totals)
    assert tuple(r.ratio_vs_fp32 for r in rows) == ratios
    assert [r.label for r in rows] == ["FP32", "Dacapo MX9", "Ours MXINT8"]


def test_footprint_grows_with_batch():
    small = footprint(square_policy(INT8), pusher_workload(16))
    large = footprint(square_policy(INT8), pusher_workload(64))
    assert large.W == small.W
    assert large.At == 4 * small.At


def test_comparison_report(pusher):
    report = comparison_report(pusher)
    assert report.mac_count == 4096
    assert report.bandwidth_gb_s == pytest.approx(330.0)
    assert report.memory_ratio == pytest.approx(370.125 / 179.765625)
    assert report.bandwidth_ratio == pytest.approx(640 / 330)
    assert report.area_ratio == pytest.approx(8.66 / 6.44)
    modes = {m.mode: m for m in report.modes}
    assert set(modes) == {"Int8", "Fp8Fp6", "Fp4"}
    int8 = modes["Int8"]
    assert int8.total_cycles == 5151
    assert int8.latency_us == pytest.approx(10.302)
    assert int8.speedup_vs_dacapo == pytest.approx(40.4 / 10.302)
    assert int8.dacapo_precision == "MX9"
    assert modes["Fp4"].total_cycles == 1847
    assert report.published_note == "published, not computed"


def test_comparison_subset_of_modes(pusher):
    report = comparison_report(pusher, modes=["fp4"])
    assert [m.mode for m in report.modes] == [MacModeKind.FP4.value]
