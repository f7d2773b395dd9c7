from datetime import datetime, timedelta

import numpy as np
import pytest

from classdbn.cohort import Cohort, Feature, FeatureSchema, PatientSeries, RawObservation

T0 = datetime(2021, 3, 1, 8, 0)


def obs(pid, hours, values, critical=False):
    return RawObservation(pid, T0 + timedelta(hours=hours), dict(values), critical)


def make_cohort(lengths, n_features=2, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    feats = [Feature(f"v{i}", "vital") for i in range(n_features)]
    schema = FeatureSchema(tuple(feats))
    labels = labels if labels is not None else [i % 2 == 0 for i in range(len(lengths))]
    patients = [
        PatientSeries(f"p{k}", rng.normal(size=(t, n_features)), lab)
        for k, (t, lab) in enumerate(zip(lengths, labels))
    ]
    return Cohort(schema, patients)


@pytest.fixture
def small_schema():
    return FeatureSchema(
        (Feature("hr", "vital", "bpm"), Feature("crp", "blood", "mg/L"), Feature("age", "static", "years"))
    )


def small_config(**overrides):
    """A pipeline config that runs end to end in about a second."""
    cfg = {
        "generator": {"n_patients": 150, "max_slices": 10},
        "select": {"enabled": True, "k_blood": 3, "n_trees": 10, "max_depth": 5},
        "dbn": {"max_parents": 3},
        "classifier": {"kinds": ["mlp", "hcsp"], "mlp": {"epochs": 5}, "hcsp": {"bins": 3, "folds": 3}},
        "smote": {"enabled": True, "k_neighbors": 3},
        "tune": {"enabled": False, "max_generations": 2, "population_size": 4},
        "evaluate": {"horizon": 10},
    }
    for section, values in overrides.items():
        if values is None:
            cfg.pop(section, None)
        else:
            cfg[section] = {**cfg.get(section, {}), **values}
    return cfg
