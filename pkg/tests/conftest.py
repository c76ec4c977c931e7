import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def oracle(name):
    """Frozen oracle value as float (fractions and decimal strings both accepted)."""
    v = ORACLES[name]
    if isinstance(v, list):
        return [float(Fraction(x)) for x in v]
    if isinstance(v, str):
        return float(Fraction(v)) if "/" in v else float(v)
    return v


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
