import numpy as np
import pytest
import torch

from mixtts.corpus import make_synthetic_corpus
from mixtts.data import load_prepared, prepare_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    make_synthetic_corpus(out, seed=0)
    return out


@pytest.fixture(scope="session")
def prepared_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("prepared")
    prepare_corpus(corpus_dir / "manifest.tsv", corpus_dir / "registry.yaml", out)
    return out


@pytest.fixture(scope="session")
def prepared(prepared_dir):
    return load_prepared(prepared_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}")
