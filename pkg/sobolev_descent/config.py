"""
Configuration files and shared configuration objects.

Configuration files are flat YAML mappings, one `key: value` per line, like
the examples shipped in sobolev_descent/scripts/examples/. A run manifest
is accepted as well, its `config` mapping is then used.

Precedence when resolving a run configuration:
    preset defaults < configuration file < command line flags
"""

import os
from dataclasses import dataclass

import yaml

from sobolev_descent.errors import DataIOError, ParameterError
from sobolev_descent.features import sample_feature_map


@dataclass(frozen=True)
class FeatureSpec:
    """
    Parameters of a random Fourier feature map.

    :param d: input dimension
    :param m: number of features
    :param sigma: bandwidth
    :param seed: 64-bit seed of the "features" stream
    :param normalize: c = sqrt(2/m) if True, c = 1 otherwise
    """
    d: int
    m: int
    sigma: float
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"d must be a positive integer, got {self.d}")
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")

    def sample(self, purpose="features"):
        """Draw the FeatureMap described by this spec."""
        return sample_feature_map(self.d, self.m, self.sigma, self.seed,
                                  normalize=self.normalize, purpose=purpose)


def load_config_file(fname):
    """
    Read a flat YAML configuration file.

    :param fname: path to a .yml or .yaml file, or to a run manifest
    :return: dict of parameters
    """
    if not os.path.isfile(fname):
        raise DataIOError(f"Configuration file not found: {fname}")
    if not fname.endswith((".yml", ".yaml")):
        raise DataIOError(
            f"Parameter fname must end with .yaml or .yml, got {fname}")

    try:
        with open(fname, "r") as f:
            content = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise DataIOError(f"Could not parse {fname}: {e}")

    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ParameterError(f"{fname} must contain a key: value mapping")

    # run manifest
    if isinstance(content.get("config"), dict):
        content = content["config"]

    nested = [k for k, v in content.items() if isinstance(v, dict)]
    if nested:
        raise ParameterError(
            f"{fname} must be flat, nested keys found: {', '.join(nested)}")
    return content


def resolve_config(defaults, file_params=None, flag_params=None):
    """
    Merge parameters by precedence: defaults < file < flags.

    Unknown keys are rejected, None flags are ignored.

    :param defaults: dict of every accepted key with its default value
    :param file_params: dict read from a configuration file
    :param flag_params: dict of command line values, None when not given
    """
    resolved = dict(defaults)
    for source, params in (("configuration file", file_params),
                           ("command line", flag_params)):
        for key, value in (params or {}).items():
            if key not in resolved:
                raise ParameterError(f"Unknown parameter '{key}' in {source}")
            if value is not None:
                resolved[key] = value
    return resolved


def create_yaml_file(fname, **kwargs):
    """
    Create a flat yaml file storing all keywords arguments given in input.

    :param fname: path to created yaml file
    :param kwargs: parameters to store in file
    """
    if not fname.endswith((".yaml", ".yml")):
        raise DataIOError("Parameter fname must end with .yaml or .yml")

    directory = os.path.dirname(fname)
    if directory:
        os.makedirs(directory, exist_ok=True)

    try:
        with open(fname, "w") as f:
            yaml.safe_dump(kwargs, f, default_flow_style=False, sort_keys=False)
    except OSError as e:
        raise DataIOError(f"Could not write {fname}: {e}")


def coerce_types(params, types):
    """
    Cast configuration values read from text to their python types.

    Values that are None are kept, list types are given as [type].

    :param params: resolved configuration
    :param types: dict key -> type, e.g. {"m": int, "lambdas": [float]}
    :return: new dict
    """
    coerced = dict(params)
    for key, kind in types.items():
        value = coerced.get(key)
        if value is None:
            continue
        try:
            if isinstance(kind, list):
                if not isinstance(value, (list, tuple)):
                    value = [value]
                coerced[key] = [kind[0](v) for v in value]
            elif kind is bool and isinstance(value, str):
                coerced[key] = value.strip().lower() in ("1", "true", "yes", "on")
            else:
                coerced[key] = kind(value)
        except (TypeError, ValueError):
            raise ParameterError(
                f"Parameter '{key}' must be of type {getattr(kind, '__name__', kind)}, "
                f"got {value!r}")
    return coerced
