import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cglens import forest
from cglens.synth import load_profiles

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def verdict(number: int, ok: bool, text: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def profiles():
    return load_profiles()


def threshold_forest(feature, thresholds, classes, n_features):
    """Stump ensemble: tree k votes classes[1] when x[feature] > thresholds[k], else classes[0]."""
    trees = []
    for t in thresholds:
        trees.append(forest.Tree(np.array([feature, -1, -1]), np.array([t, 0.0, 0.0]), np.array([1, -1, -1]),
                                 np.array([2, -1, -1]), np.array([0, 0, 1])))
    return forest.Ensemble(tuple(trees), tuple(classes), n_features, 1, 0)


def constant_forest(votes, classes, n_features):
    """Ensemble whose trees vote the given class indices regardless of input."""
    trees = [forest.Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([v]))
             for v in votes]
    return forest.Ensemble(tuple(trees), tuple(classes), n_features, 1, 0)


@pytest.fixture(scope="session")
def engine_cfg():
    from cglens.config import EngineConfig
    return EngineConfig.load(use_env=False)


def gameplay_sessions(profile_list, per_profile, duration, seed=0):
    """(raw volumetrics, labels) for synthetic sessions of every given profile."""
    from cglens.synth import random_config, synthesize
    out = []
    for i, prof in enumerate(profile_list):
        for k in range(per_profile):
            s_seed = seed + 100 * i + k
            s = synthesize(prof, duration, random_config(np.random.default_rng(s_seed)), s_seed)
            out.append((s.volumetrics(), s.labels))
    return out


@pytest.fixture(scope="session")
def small_corpus(profiles):
    from cglens.synth import catalog_profiles
    return gameplay_sessions(catalog_profiles(profiles), 3, 300)


@pytest.fixture(scope="session")
def stage_model(small_corpus, engine_cfg):
    from cglens.pipeline import stage_dataset, train_task
    return train_task("stage", stage_dataset(small_corpus, engine_cfg), engine_cfg, 0, n_trees=30)


@pytest.fixture(scope="session")
def pattern_model(small_corpus, engine_cfg, stage_model):
    from cglens.pipeline import balance_classes, pattern_dataset, train_task
    data = balance_classes(pattern_dataset(small_corpus, engine_cfg, stage_model))
    return train_task("pattern", data, engine_cfg, 0, n_trees=30)
