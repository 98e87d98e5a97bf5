import numpy as np
import pytest

from affective_processes.config import ModelConfig
from affective_processes.sequence import Sequence

ACCEPTANCE_LINES = []


def toy_config(variant="latent", feature_dim=8, label_dim=2, latent_dim=6, **kw):
    """Tiny architecture used by the unit tests (widths are arbitrary but distinct)."""
    kw.setdefault("encoder_hidden", (10, 8))
    kw.setdefault("decoder_hidden", (9, 7, 5))
    kw.setdefault("attention_heads", 2)
    kw.setdefault("attention_head_dim", 3)
    return ModelConfig(feature_dim=feature_dim, label_dim=label_dim, latent_dim=latent_dim,
                       variant=variant, **kw)


def random_sequence(rng, n=12, feature_dim=8, label_dim=2, sid="s"):
    labels = np.tanh(rng.normal(size=(n, label_dim)))
    pseudo = np.clip(labels + 0.2 * rng.normal(size=(n, label_dim)), -1, 1)
    return Sequence(sid, rng.normal(size=(n, feature_dim)), labels, pseudo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
