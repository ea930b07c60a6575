from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gravgrasp.closure import ClosureConfig
from gravgrasp.geometry.mesh import box_mesh, cylinder_mesh, icosphere
from gravgrasp.hand import GripperParams
from gravgrasp.pipeline import build_object_grasps
from gravgrasp.sampling import SamplerConfig
from gravgrasp.scene import ObjectModel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_VERDICTS = pytest.StashKey[list]()

CYLINDER_RADIUS = 0.0325
CYLINDER_HEIGHT = 0.200


@pytest.fixture(scope="session")
def params() -> GripperParams:
    return GripperParams()


@pytest.fixture(scope="session")
def cylinder():
    return cylinder_mesh(CYLINDER_RADIUS, CYLINDER_HEIGHT)


@pytest.fixture(scope="session")
def tall_box():
    return box_mesh([0.100, 0.080, 0.100])


@pytest.fixture(scope="session")
def small_block():
    return box_mesh([0.05, 0.05, 0.12])


@pytest.fixture(scope="session")
def sphere():
    return icosphere(0.03, 3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def _grasps(mesh, **kw):
    cfg = SamplerConfig(**{"approach_angles": 4, "perturbations_per_seed": 2, "rng_seed": 3, **kw})
    return build_object_grasps(mesh, cfg, GripperParams(), ClosureConfig()).grasps


@pytest.fixture(scope="session")
def library(cylinder, tall_box, small_block):
    """Scored grasps for three objects, computed once per session."""
    return {
        "cylinder": ObjectModel("cylinder", cylinder, _grasps(cylinder, n_surface_samples=14)),
        "box": ObjectModel("box", tall_box, _grasps(tall_box, n_surface_samples=30)),
        "block": ObjectModel("block", small_block, _grasps(small_block, n_surface_samples=14)),
    }


@pytest.fixture(scope="session")
def library_dir(library, tmp_path_factory):
    """The session library written as ``<name>.obj`` plus ``<name>.grasps.json``."""
    import json

    from gravgrasp.geometry.mesh import save_obj

    root = tmp_path_factory.mktemp("library")
    for name, model in library.items():
        save_obj(model.mesh, root / f"{name}.obj")
        (root / f"{name}.grasps.json").write_text(json.dumps({"grasps": [g.to_dict() for g in model.grasps]}))
    return root


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; the terminal summary lists them all."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    seen = []

    def record(number: int, title: str, checks: dict[str, bool], detail: str = ""):
        failed = [name for name, ok in checks.items() if not ok]
        verdict = "PASS" if not failed else "FAIL"
        line = f"criterion {number}: {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        lines.append((number, line))
        seen.append(number)
        print(line)
        assert not failed, line

    yield record
    if not seen:
        lines.append((999, f"{request.node.name}: FAIL  (error before a verdict was reached)"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
