import numpy as np
import pytest

from biqa import dataset, pipeline, toy

# One small rendered dataset shared by pipeline/CLI tests. 6 references x
# (1 + 4 distortions x 3 levels) = 78 images at 192px keeps a full training
# run under a few seconds.
TINY_SPEC = dict(n_references=6, levels=3, image_side=192, seed=0)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toydata")
    manifest = toy.gen_toy(toy.ToyDatasetSpec(**TINY_SPEC), root)
    return root, manifest


@pytest.fixture(scope="session")
def assigned_manifest(toy_root):
    _, manifest = toy_root
    return dataset.split_manifest(manifest, seed=0, fractions=(0.72, 0.08, 0.20))


@pytest.fixture(scope="session")
def trained(toy_root, assigned_manifest):
    root, _ = toy_root
    model = pipeline.train(assigned_manifest, None, seed=0, root=root)
    return model


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# Shipping-gate results, one line per numbered criterion; printed after the
# run so they are visible regardless of capture settings.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion():
    def record(number: int, ok: bool, detail: str):
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
