"""Regenerate the SI study fixtures and the golden 2-bus report.

Run from the repository root: ``python3 tests/fixtures/make_fixtures.py``.
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from cases import C_F, F1, FOLLOWING_ANISO, FOLLOWING_ISO, FORMING_GAINS, L_F, R_F, _seq, four_bus_grid, two_bus_grid  # noqa: E402
from hpflow import io as hio  # noqa: E402
from hpflow.cli import main  # noqa: E402
from hpflow.sources import EquivalentSpec  # noqa: E402

V_BASE = 400 * np.sqrt(2 / 3)  # peak phase voltage of a 400 V system
S_BASE = 100e3
GOLDEN_HMAX = 10


def forming_spec(node):
    g = FORMING_GAINS
    return hio.CiderSpec(
        node=node, mode="forming", filter_stages=[{"L": L_F, "R": R_F, "C": C_F}],
        controller_stages=[{"kp": g["kp_v"], "ki": g["ki_v"]}, {"kp": g["kp_i"], "ki": g["ki_i"]}],
        setpoint={"V": 1.0, "f": F1}, name=f"gfm{node}",
    )


def following_spec(node, P, Q, aniso=True):
    g = FOLLOWING_ANISO if aniso else FOLLOWING_ISO
    return hio.CiderSpec(
        node=node, mode="following", filter_stages=[{"L": L_F, "R": R_F}],
        controller_stages=[{"kp": g["kp"], "ki": g["ki"]}], setpoint={"P": P, "Q": Q}, name=f"gfl{node}",
    )


def norton_spec(node, h_max=25, i5=0.02, i7=0.014, g=0.1, b=0.05):
    spectrum = {5: i5 * _seq(5), 7: i7 * _seq(7)}
    matrix = {(h, h): (g - 1j * b / h if h else g) * np.eye(3) for h in range(h_max + 1)}
    return EquivalentSpec("norton", node, spectrum, matrix)


def studies():
    g2 = replace(two_bus_grid(), v_base=V_BASE, s_base=S_BASE)
    g4 = replace(four_bus_grid(), v_base=V_BASE, s_base=S_BASE)
    return {
        "two_bus": hio.Study(g2, [forming_spec(1), following_spec(2, 0.5, 0.1)]),
        "four_bus": hio.Study(
            g4,
            [forming_spec(1), following_spec(2, 0.3, 0.05), following_spec(3, 0.2, -0.05, aniso=False)],
            [norton_spec(4)],
        ),
    }


if __name__ == "__main__":
    for name, study in studies().items():
        hio.dump_study(study, HERE / name)
    d = HERE / "two_bus"
    code = main(["solve", "--grid", str(d / "grid.json"), "--ciders", str(d / "ciders.json"),
                 "--hmax", str(GOLDEN_HMAX), "--out", str(d / "golden_spectra.csv")])
    sys.exit(code)
