import pytest

from sqzexport import load_reference, make_fixtures


@pytest.fixture(scope="session")
def model():
    return load_reference(seed=0)


@pytest.fixture(scope="session")
def fixtures_dir(tmp_path_factory, model):
    out = tmp_path_factory.mktemp("fixtures")
    make_fixtures(model, out, source={"kind": "seeded-init", "model": "squeezenet1_0",
                                      "seed": 0})
    return out
