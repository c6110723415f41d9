import numpy as np
import pytest

from multiflow.core import FouTriplet


def triplet(flow, occ, unc, src=0, dst=1):
    """Build a triplet from nested lists; flow is (H, W, 2)."""
    return FouTriplet(np.asarray(flow, np.float32), np.asarray(occ, np.float32), np.asarray(unc, np.float32), src, dst)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
