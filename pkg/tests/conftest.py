import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtp.cvae import CvaeConfig

settings.register_profile("dtp", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dtp")


def tiny_config(**overrides) -> CvaeConfig:
    """A model small enough for finite-difference checks."""
    base = dict(
        height=3,
        width=4,
        n_coeffs=2,
        n_features=3,
        latent_dim=2,
        code_dim=6,
        image_hidden=(5,),
        encoder_hidden=(4,),
        decoder_hidden=(5,),
    )
    base.update(overrides)
    return CvaeConfig(**base)


def tiny_batch(cfg: CvaeConfig, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, cfg.input_dim))
    y_dir = rng.normal(size=(n, cfg.direction_dim))
    y_mag = rng.random((n, 2)) + 0.1
    eta = rng.normal(size=(n, cfg.latent_dim))
    return X, y_dir, y_mag, eta


@pytest.fixture(scope="session")
def experiment():
    """The full default multimodality experiment, trained once per session."""
    from dtp.experiment import run_experiment

    return run_experiment()


ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    """Remember one acceptance verdict; the terminal summary prints them in order."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
