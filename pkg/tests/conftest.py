"""Session fixtures for the expensive shared artifacts.

The mask stack and the binary-search reference patterns take tens of
seconds to a few minutes; they are built once per session (seed-pinned)
and shared by module and acceptance tests.  Reference patterns are also
cached on disk inside the session cache directory.
"""

import numpy as np
import pytest

from ddhalftone.classtiling import quantize_prototype
from ddhalftone.dbs import DbsConfig, build_mask_stack, groundtruth_pattern
from ddhalftone.optimizer import init_table

MASK_SEED = 7
GT_SEED = 3


@pytest.fixture(scope="session")
def cache_root(tmp_path_factory):
    return tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def dbs_cfg():
    return DbsConfig(seed=MASK_SEED)


@pytest.fixture(scope="session")
def mask_stack_256(dbs_cfg):
    return build_mask_stack(256, dbs_cfg)


@pytest.fixture(scope="session")
def ct_default(mask_stack_256):
    return quantize_prototype(mask_stack_256, 8, 8)


@pytest.fixture(scope="session")
def table_init():
    return init_table()


@pytest.fixture(scope="session")
def gt512_g64(cache_root):
    return groundtruth_pattern(64, 512, DbsConfig(seed=GT_SEED), str(cache_root))


@pytest.fixture(scope="session")
def rng_factory():
    def make(seed):
        return np.random.default_rng(seed)

    return make
