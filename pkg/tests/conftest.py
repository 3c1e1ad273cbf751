from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
TINY_CONFIG = ROOT / "configs" / "tiny.yaml"

# 3×3×3 com Γ_int fechado ao redor da célula central
SMALL_YAML = """
mesh:
  shape: [3, 3, 3]
  extents: [[0.0, 300.0], [0.0, 300.0], [-300.0, 0.0]]
  reservoir:
    lower: [-1.0e9, -1.0e9, -200.0]
    upper: [1.0e9, 1.0e9, -100.0]
  dirichlet: [top]
  gamma_int:
    lower: [100.0, 100.0, -200.0]
    upper: [200.0, 200.0, -100.0]
  well:
    lower: [100.0, 100.0, -200.0]
    upper: [200.0, 200.0, -100.0]
time:
  final_time_days: 40.0
  step_days: 10.0
sampling:
  training_size: 6
  test_size: 3
scm:
  enabled: false
greedy:
  max_dimension: 3
"""


@pytest.fixture(scope="session")
def tiny_config():
    from config import load_config

    return load_config(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_case(tiny_config):
    from config import build_case

    return build_case(tiny_config)


@pytest.fixture(scope="session")
def small_case():
    from config import build_case, parse_config

    return build_case(parse_config(SMALL_YAML, "small.yaml"))


@pytest.fixture(scope="session")
def tiny_disc(tiny_case):
    from mpfa import MpfaDiscretization

    return MpfaDiscretization(tiny_case.mesh, tiny_case.props)


@pytest.fixture(scope="session")
def small_disc(small_case):
    from mpfa import MpfaDiscretization

    return MpfaDiscretization(small_case.mesh, small_case.props)


@pytest.fixture(scope="session")
def tiny_run(tiny_case):
    """Offline completo do caso de duas células (reaproveitado entre módulos)."""
    from cli import run_offline

    return run_offline(tiny_case)


@pytest.fixture(scope="session")
def tiny_problem(tiny_run):
    from cli import _truth

    return _truth(tiny_run.archive)
