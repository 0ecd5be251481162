import numpy as np
import pytest

from radapt import preset_design


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def reference_design():
    # stages 6/6/8, K=3, tau=0.1, Beta(1,1) priors, thresholded mapping
    return preset_design("mapped_alpha")
