import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from mtprompt.data import SyntheticSpec, gen_synthetic, tokenize_suite  # noqa: E402
from mtprompt.encoder import EncoderSpec  # noqa: E402


@pytest.fixture(scope="session")
def toy_encoder():
    """Small encoder for gradient-heavy tests."""
    return EncoderSpec(d_embed=16, d_txt=24, depth=1, heads=2)


@pytest.fixture(scope="session")
def default_encoder():
    return EncoderSpec()


@pytest.fixture(scope="session")
def toy_tokenized(toy_encoder):
    """2 tasks x 3 classes at a finite-difference-friendly temperature."""
    spec = SyntheticSpec(n_tasks=2, n_classes=3, train_per_class=3,
                         val_per_class=0, test_per_class=2, seed=5,
                         temperature=0.25)
    suite = gen_synthetic(spec, toy_encoder)
    return tokenize_suite(suite, toy_encoder)


@pytest.fixture(scope="session")
def check_tokenized(default_encoder):
    """3 tasks x 4 classes at default dims for the one-step update checks."""
    spec = SyntheticSpec(n_tasks=3, n_classes=4, train_per_class=4,
                         val_per_class=0, test_per_class=2, seed=7)
    suite = gen_synthetic(spec, default_encoder)
    return tokenize_suite(suite, default_encoder)


@pytest.fixture()
def toy_batch(toy_tokenized):
    suite = toy_tokenized.suite
    return [(t, i) for t in range(suite.n_tasks)
            for i in suite.bundles[t].splits["train"]]
