import numpy as np
import pytest

from decrob import codes


@pytest.fixture(scope="session")
def hamming74():
    return codes.load_bundled("hamming_7_4")


@pytest.fixture(scope="session")
def hamming1511():
    return codes.load_bundled("hamming_15_11")


@pytest.fixture(scope="session")
def repetition31():
    return codes.load_bundled("repetition_3_1")


@pytest.fixture(scope="session")
def ldpc49():
    return codes.load_bundled("ldpc_49_24")


@pytest.fixture(scope="session")
def ldpc121():
    return codes.load_bundled("ldpc_121_60")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
