import numpy as np
import pytest

from loopforge.corpus import builtin_manifold

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def corpus():
    return {
        "euclidean-plane": builtin_manifold("euclidean-plane"),
        "round-sphere": builtin_manifold("round-sphere", R=1.0),
        "flat-cylinder": builtin_manifold("flat-cylinder", a=1.0),
        "torus-revolution": builtin_manifold("torus-revolution", R=2.0, r=1.0),
        "catenoid": builtin_manifold("catenoid", c=1.0),
        "pseudosphere": builtin_manifold("pseudosphere"),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# heavy runs shared by the shortening tests and the acceptance gate
# ---------------------------------------------------------------------------

NECK_FIXTURE = ([0.5, 0.0], [-0.40845952229755306, 0.787152178178008], 6.537541195079716)


class TimedRun:
    def __init__(self, loop, result, seconds):
        self.loop = loop
        self.result = result
        self.seconds = seconds


@pytest.fixture(scope="session")
def neck_loop(corpus):
    from loopforge.loops import loop_from_state

    p, w, l = NECK_FIXTURE
    return loop_from_state(corpus["catenoid"], p, w, l)


@pytest.fixture(scope="session")
def neck_run(corpus, neck_loop):
    import time

    from loopforge.shortening import ShorteningConfig, shorten_to_closed

    t0 = time.perf_counter()
    res = shorten_to_closed(corpus["catenoid"], neck_loop, ShorteningConfig(max_iter=200))
    return TimedRun(neck_loop, res, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def cusp_run(corpus):
    import time

    from loopforge.loops import LoopSearchConfig, find_loops_from_point
    from loopforge.shortening import ShorteningConfig, shorten_to_closed

    t0 = time.perf_counter()
    m = corpus["pseudosphere"]
    loops = find_loops_from_point(m, [0.5, 0.0], LoopSearchConfig(l_min=0.5, l_max=5.0))
    loop = loops[0]
    res = shorten_to_closed(m, loop, ShorteningConfig(max_iter=500))
    return TimedRun(loop, res, time.perf_counter() - t0)
