import pytest

from gcx.compute_units import ReferenceSystem


@pytest.fixture
def reference() -> ReferenceSystem:
    """1 TFLOPS baseline: one CH per operational hour."""
    return ReferenceSystem(id="ref-1", reference_performance="1e12",
                           reference_efficiency="5e9")
