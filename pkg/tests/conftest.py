import numpy as np
import pytest

from services.hamiltonian_model import DisorderKind, DisorderSample, DisorderSpec, HamiltonianModel, ModelConfig
from services.lovasz_theta import LovaszThetaService
from services.matching_calculus import MatchingCalculus
from services.product_states import ProductStateService
from services.spectral_solver import SpectralSolver
from services.variance_moments import VarianceMoments, bell_state


@pytest.fixture(autouse=True)
def out_dir(tmp_path, monkeypatch):
    """所有结果文件写到临时目录（SPINLAB_OUT 优先于 --out）"""
    path = tmp_path / "out"
    monkeypatch.setenv("SPINLAB_OUT", str(path))
    return path


@pytest.fixture
def model():
    return HamiltonianModel()


@pytest.fixture
def spectral():
    return SpectralSolver()


@pytest.fixture
def products(model):
    return ProductStateService(model)


@pytest.fixture
def matchings():
    return MatchingCalculus()


@pytest.fixture
def moments(model, spectral):
    return VarianceMoments(model, spectral)


@pytest.fixture
def lovasz(model):
    return LovaszThetaService(model)


@pytest.fixture
def sample_factory(model):
    def make(n, p, seed=0, adjusted=False, kind=DisorderKind.GAUSSIAN, average_degree=None):
        config = ModelConfig(n=n, p=p, include_identity_letters=adjusted)
        spec = DisorderSpec(kind=kind, average_degree=average_degree, seed=seed)
        return model.sample_disorder(config, spec)
    return make


@pytest.fixture
def zz_toy(model):
    """只有 Z0 Z1 系数为 1 的 n=2 实例，乘积态最优能量为 1"""
    config = ModelConfig(n=2, p=2)
    coefficients = np.zeros(config.term_count)
    coefficients[model.term_table(config).index_of("Z0 Z1")] = 1.0
    return DisorderSample(config=config, spec=DisorderSpec(), coefficients=coefficients)


@pytest.fixture
def bell():
    return bell_state()
