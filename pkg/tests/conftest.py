import numpy as np
import pytest

from micsweep.fixtures import DEFAULT_CARS, NoiseClass
from micsweep.pipeline import default_manifest_dict, load_manifest

CI_PROFILE_IDS = ("hp20_lp4000_flat", "hp100_lp8000_flat", "hp350_lp8000_flat",
                  "hp20_lp20000_flat", "hp100_lp20000_pk4000_q2")


def ci_manifest_dict(tmp_path, seed=0, profiles=CI_PROFILE_IDS, cars=DEFAULT_CARS[:1]):
    sel = tmp_path / "ci_selection.txt"
    sel.write_text("\n".join(profiles) + "\n")
    spec = default_manifest_dict(seed=seed, cars=cars, selection=str(sel),
                                 output_dir=str(tmp_path / "out"))
    return spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ci_manifest(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ci")
    return load_manifest(ci_manifest_dict(tmp))


@pytest.fixture(scope="session")
def all_noises():
    return tuple(NoiseClass)


acceptance_lines_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[acceptance_lines_key] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``; the caller still asserts."""
    lines = request.config.stash[acceptance_lines_key]

    def record(n, ok, detail):
        lines.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(acceptance_lines_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
