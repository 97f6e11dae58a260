"""
Run manifests.

A manifest is written in the output directory before a run starts. It holds
the fully resolved configuration, the seeds and stream table, the versions
of the packages that computed the run and the paths of every output, so
that `sobolev-descent <experiment> --config manifest.yml` reproduces it.
"""

import os
from importlib.metadata import PackageNotFoundError, version

import numpy as np
import yaml

from sobolev_descent.config import create_yaml_file
from sobolev_descent.errors import DataIOError, ParameterError
from sobolev_descent.streams import STREAM_IDS
from sobolev_descent.version import get_git_version

MANIFEST_NAME = "manifest.yml"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "Pillow")


def _plain(value):
    """numpy scalars, tuples and arrays as yaml friendly python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def package_versions():
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = None
    return versions


class RunManifest:
    """
    Everything needed to reproduce one experiment.

    :param experiment: subcommand name, e.g. "gauss1d"
    :param config: resolved configuration, every default materialized
    :param out_dir: output directory, the manifest is saved there
    """

    def __init__(self, experiment, config, out_dir):
        if "seed" not in config:
            raise ParameterError("A run configuration must define a seed")
        self.experiment = experiment
        self.config = _plain(dict(config))
        self.out_dir = out_dir
        self.seeds = {"seed": self.config["seed"], "streams": dict(STREAM_IDS)}
        self.version = get_git_version()
        self.packages = package_versions()
        self.outputs = {}
        self.metadata = {}

    def __repr__(self):
        return f"RunManifest {self.experiment} in {self.out_dir}.\n"

    def __str__(self):
        return repr(self)

    @property
    def path(self):
        return os.path.join(self.out_dir, MANIFEST_NAME)

    def output(self, key, fname):
        """Register an output file and return its full path."""
        path = os.path.join(self.out_dir, fname)
        self.outputs[key] = path
        return path

    def as_dict(self):
        return {
            "experiment": self.experiment,
            "config": self.config,
            "seeds": self.seeds,
            "version": self.version,
            "packages": self.packages,
            "outputs": self.outputs,
            "metadata": _plain(self.metadata),
        }

    def save(self):
        """Write the manifest to out_dir/manifest.yml."""
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise DataIOError(f"Could not create output directory {self.out_dir}: {e}")
        create_yaml_file(self.path, **self.as_dict())
        return self.path

    @classmethod
    def load(cls, fname):
        try:
            with open(fname, "r") as f:
                content = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise DataIOError(f"Could not read manifest {fname}: {e}")
        if not isinstance(content, dict) or "config" not in content:
            raise DataIOError(f"{fname} is not a run manifest")

        manifest = cls(content["experiment"], content["config"],
                       os.path.dirname(fname))
        manifest.version = content.get("version", manifest.version)
        manifest.packages = content.get("packages", {})
        manifest.outputs = content.get("outputs", {})
        manifest.metadata = content.get("metadata", {})
        return manifest
