import pytest

from modules.models import ProblemDims


@pytest.fixture
def small_dims() -> ProblemDims:
    return ProblemDims(N=4, K=2, M=2, T=50)


@pytest.fixture
def write_csv(tmp_path):
    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
