import numpy as np
import pytest

from unseendet.taxonomy import load_taxonomy, parse_taxonomy
from unseendet.tinydet import ArchConfig, init_model

SMALL_ARCH = ArchConfig(input_size=32, grid=2, anchors=((0.3, 0.3), (0.8, 0.8)), head_channels=8,
                        backbone=(4, 4, 6), block_depth=1)


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


@pytest.fixture
def toy_taxonomy():
    return parse_taxonomy(
        """
        node animal
        node ovine
        node goatlike
        node sheeplike
        node reptile
        node gecko
        node island
        node rock
        edge animal ovine
        edge ovine goatlike
        edge ovine sheeplike
        edge animal reptile
        edge reptile gecko
        edge island rock
        alias Capra goatlike
        """
    )


@pytest.fixture
def small_model():
    return init_model(SMALL_ARCH, ["circle", "square", "triangle"], seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
