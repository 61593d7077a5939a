import numpy as np
import pytest

from curvekit.calibration_online import VanillaVolStrip, VolQuote
from curvekit.factor_model import FactorSpec
from curvekit.termstructure import ContractEntry, ContractSchedule, ForwardCurve


@pytest.fixture(scope="session")
def wti_spec():
    return FactorSpec(
        beta=[0.35, 0.0],
        p_const=[1.6, 1.0],
        q_const=[1.6, 1.0],
        rho=[[1.0, -0.20], [-0.20, 1.0]],
        epsilon=0.0,
    )


@pytest.fixture(scope="session")
def monthly_schedule():
    return ContractSchedule(tuple(
        ContractEntry(f"m{i + 1}", (i + 1) / 12 - 1 / 24, (i + 1) / 12)
        for i in range(36)
    ))


@pytest.fixture(scope="session")
def monthly_strip():
    big_t = np.arange(1, 37) / 12.0
    vols = 0.17 + 0.05 * np.exp(-big_t / 2.0)
    return VanillaVolStrip(tuple(
        VolQuote(f"m{i + 1}", float(big_t[i] - 1 / 24), float(big_t[i]),
                 float(vols[i]))
        for i in range(36)
    ))


@pytest.fixture(scope="session")
def flat_curve():
    return ForwardCurve(np.array([0.01, 10.0]), np.array([90.0, 90.0]))
