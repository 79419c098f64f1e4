import numpy as np
import pytest

from dualmpc import model as mdl
from dualmpc import numerics as num

BT_AC = np.array([[0.0, -0.008, 0.0],
                  [0.0, -0.003, 0.0],
                  [0.0, 0.092, -0.1]])
BT_BC = np.array([[1.66, 0.0, -1.68],
                  [-0.15, 0.9, -0.43],
                  [0.0, 0.0, 17.4]])
BT_C = np.eye(3)


@pytest.fixture(scope="session")
def bt_model():
    A, B = num.zoh_discretize(BT_AC, BT_BC, 1.0)
    part = mdl.Partition(n_s=1, n_f=2, m_s=1, m_f=2, p_s=1, p_f=2)
    return mdl.DiscreteLtiModel(A=A, B=B, C=BT_C.copy(), partition=part, step_seconds=1.0)


@pytest.fixture(scope="session")
def bt_sampled(bt_model):
    return mdl.resample(bt_model, 20)


@pytest.fixture(scope="session")
def bt_velocity(bt_model, bt_sampled):
    tilde = mdl.build_tilde_system(bt_sampled, bt_model.C_ff)
    return mdl.build_velocity_form(tilde)


def random_schur(rng, n, rho_max=0.9):
    """Random matrix with spectral radius scaled below rho_max."""
    M = rng.standard_normal((n, n))
    radius = num.spectral_radius_bound(M)
    target = rho_max * rng.uniform(0.2, 1.0)
    return M * (target / max(radius, 1e-12))
