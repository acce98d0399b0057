import json
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from visrted import casedata as cd  # noqa: E402
from visrted import cli  # noqa: E402
from visrted import dispatch as dp  # noqa: E402
from visrted import surrogate as sg  # noqa: E402

# criterion number -> (passed, detail); printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(k, ok, detail=""):
        prev = ACCEPTANCE.get(k)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}" if detail else prev[1]
        ACCEPTANCE[k] = (bool(ok), detail)

    return _record


@pytest.fixture(scope="session")
def case():
    return cd.builtin_case()


@pytest.fixture(scope="session")
def compare_run(tmp_path_factory):
    """The full built-in pipeline: train both nets, schedule I-IV, simulate."""
    out = tmp_path_factory.mktemp("compare")
    t0 = time.perf_counter()
    rc = cli.main(["compare", "--case", "builtin", "--profile", "seed:42", "--methods", "I,II,III,IV",
                   "--out", str(out)])
    wall = time.perf_counter() - t0
    report = json.loads((out / "compare.json").read_text()) if rc == 0 else None
    manifest = json.loads((out / "manifest_compare.json").read_text()) if rc == 0 else None
    return {"rc": rc, "out": out, "wall": wall, "report": report, "manifest": manifest}


@pytest.fixture(scope="session")
def nets(compare_run):
    d = compare_run["out"] / "models"
    return {t: sg.Mlp.load(d / f"{t}.json") for t in sg.TARGETS}


@pytest.fixture(scope="session")
def models(nets):
    return dp.SurrogateModels(nets["nadir"], nets["peak_power"])


@pytest.fixture(scope="session")
def solutions(compare_run):
    out = compare_run["out"]
    return {m: dp.DispatchSolution.load(out / f"schedule_{m}.json") for m in cli.METHODS}
