from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
GRID_CSV = DATA / "grid_drift_diffusion.csv"


@pytest.fixture(scope="session")
def grid_dataset():
    """The cached drift-diffusion dataset over the default grid."""
    from cellopt.pipeline import Dataset
    if not GRID_CSV.exists():
        pytest.skip("cached grid dataset missing; run demos/generate_dataset.py")
    return Dataset.from_csv(GRID_CSV)


@pytest.fixture(scope="session")
def composite_dataset():
    from cellopt.pipeline import GridSpec, generate_dataset
    return generate_dataset(GridSpec.default(), "diode-composite")


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: ``criterion(n, ok, detail)``."""
    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
