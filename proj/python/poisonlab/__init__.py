"""Python bindings for poisonlab.

Configs, manifests and summaries come back as plain dicts; images as float32
numpy arrays shaped (N, H, W, C) with values in [0, 1].
"""

import json
import os

from . import _core
from ._core import (
    DecodeError,
    IoError,
    NumericError,
    PoisonlabError,
    StructureError,
    TrainingError,
    ValidationError,
    apply_trigger,
    forgetting_score,
    predict,
    project_linf,
    read_dataset_cache,
    verify_manifest,
)

__version__ = _core.version()

REAL = 0
FAKE = 1


def load_config(path):
    """Parse a config file with every default filled in."""
    return json.loads(_core.load_config(os.fspath(path)))


def normalize_config(config, base_dir=""):
    """Validate a config dict and return it with defaults filled in."""
    return json.loads(_core.normalize_config(json.dumps(config), os.fspath(base_dir)))


def generate_synthetic(**fields):
    """Synthetic real/fake set. Keyword arguments are SyntheticConfig fields."""
    return _core.generate_synthetic(json.dumps(fields))


def read_trigger(path):
    meta, payload = _core.read_trigger(os.fspath(path))
    meta = json.loads(meta)
    meta["payload"] = payload
    return meta


def run_pipeline(config, out, force=False, log=None):
    """Run a sweep. `config` is a dict or a path to a config file; returns the manifest."""
    if not isinstance(config, dict):
        config = load_config(config)
    return json.loads(_core.run_pipeline(json.dumps(config), os.fspath(out), force, log))


def replay_manifest(manifest, out, log=None):
    """Re-run a manifest's config into `out`. Returns (artifacts compared, mismatch list)."""
    return _core.replay_manifest(os.fspath(manifest), os.fspath(out), log)


def write_report(runs, out):
    """Aggregate run directories into plots and summary.json. Returns (summary, warnings)."""
    summary, warnings = _core.write_report([os.fspath(r) for r in runs], os.fspath(out))
    return json.loads(summary), warnings
