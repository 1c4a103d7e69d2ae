"""Shared fixtures: a 4x-coarsened reference run, built once per session."""
import pytest

from evanescent.grid import PAPER_UNITS
from evanescent.pipeline import PipelineConfig, cmd_eigen, load_spectrum


def quiet(*_):
    pass


def coarse_config(out, scale=4.0, **overrides) -> PipelineConfig:
    data = PipelineConfig().to_dict()
    data.update(output_dir=str(out), mesh_scale=scale)
    data.update(overrides)
    return PipelineConfig.from_dict(data)


@pytest.fixture(scope="session")
def mass():
    return PAPER_UNITS.mass


@pytest.fixture(scope="session")
def coarse_run(tmp_path_factory):
    """Config and output directory of an eigen stage on the 4x-coarsened mesh."""
    out = tmp_path_factory.mktemp("coarse")
    cfg = coarse_config(out)
    cmd_eigen(cfg, echo=quiet)
    return cfg


@pytest.fixture(scope="session")
def coarse_spectrum(coarse_run):
    return load_spectrum(coarse_run.out)


# acceptance criteria record (number -> (passed, detail)); printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
