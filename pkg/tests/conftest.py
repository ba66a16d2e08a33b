import numpy as np
import pytest

from stereodepth import geometry, synth
from stereodepth import optimize as op


@pytest.fixture(scope="session")
def desk_ladder():
    return geometry.discretize(2.0, 32.0, 17)


@pytest.fixture(scope="session")
def two_layer():
    return synth.generate(synth.two_layer_spec())


@pytest.fixture(scope="session")
def plane8():
    return synth.generate(synth.plane_spec(disparity=8.0))


@pytest.fixture(scope="session")
def mode_runs(two_layer, desk_ladder):
    """Default-config runs on the standard two-layer scene, computed once per session.

    Keys: the three modes plus ``"no-occlusion-mask"`` (coarse-to-fine with
    M_occ forced to 1).
    """
    runs = {}
    for mode in ("coarse-to-fine", "ddc-only", "cdc-only"):
        runs[mode] = op.optimize_scene(two_layer, op.OptimizerConfig(mode=mode), desk_ladder)
    runs["no-occlusion-mask"] = op.optimize_scene(
        two_layer, op.OptimizerConfig(occlusion_mask=False), desk_ladder
    )
    return runs


def flat_roughness(depth: np.ndarray, gt_depth: np.ndarray) -> float:
    """Mean |d/dx depth| over horizontal neighbour pairs whose GT depth is equal."""
    flat = np.diff(gt_depth, axis=1) == 0
    return float(np.abs(np.diff(depth, axis=1))[flat].mean())


# pass/fail lines from test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
