"""Run configuration: YAML file, ``--set`` overrides and validation.

Every value is checked against :data:`SCHEMA`; failures raise
:class:`~polaron_lab.exceptions.ConfigError` with the file line (or the
override flag) that supplied the offending value.
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError


def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


def _unit(v):
    return 0 < v <= 1


def _fraction(v):
    return 0 < v < 1


_NUM = (int, float)

#: section -> key -> (default, accepted types, predicate or None, description)
SCHEMA = {
    "solver": {
        "r_max": (20.0, _NUM, _positive, "must be > 0"),
        "n_points": (2000, int, lambda v: v >= 4, "must be an integer >= 4"),
        "spacing": ("uniform", str, lambda v: v in ("uniform", "geometric"),
                    "must be 'uniform' or 'geometric'"),
        "tol": (1e-10, _NUM, _positive, "must be > 0"),
        "max_iter": (500, int, _positive, "must be a positive integer"),
        "init": ("gaussian", str, lambda v: v in ("gaussian", "hydrogenic"),
                 "must be 'gaussian' or 'hydrogenic'"),
        "damping": (0.7, _NUM, _unit, "must lie in (0, 1]"),
    },
    "lattice": {
        "eps": (1.0, _NUM, _positive, "must be > 0"),
        "T": (8.0, _NUM, _positive, "must be > 0"),
        "n_steps": (64, int, lambda v: v >= 2 and v % 2 == 0, "must be an even integer >= 2"),
        "eta": (0.1, _NUM, _nonnegative, "must be >= 0"),
        "kernel": ("polaron", str, lambda v: v in ("polaron", "mean_field"),
                   "must be 'polaron' or 'mean_field'"),
        "kappa": (1.0, _NUM, _nonnegative, "must be >= 0"),
    },
    "sampler": {
        "pcn_beta": (0.2, _NUM, _unit, "must lie in (0, 1]"),
        "local_width": (1.0, _NUM, _unit, "must lie in (0, 1]"),
        "n_sweeps": (2000, int, _positive, "must be a positive integer"),
        "burn_in": (500, int, _nonnegative, "must be a nonnegative integer"),
        "thinning": (5, int, _positive, "must be a positive integer"),
        "n_chains": (4, int, lambda v: v >= 2, "must be an integer >= 2"),
        "pcn_moves": (1, int, _nonnegative, "must be a nonnegative integer"),
    },
    "estimate": {
        "kappa_nodes": (8, (int, list), None, "must be an int or a list of nodes"),
    },
    "diffusion": {
        "dt": (1e-3, _NUM, _positive, "must be > 0"),
        "n_steps": (10000, int, _positive, "must be a positive integer"),
        "n_paths": (1000, int, _positive, "must be a positive integer"),
        "drift_clamp": (50.0, _NUM, _positive, "must be > 0"),
        "record_every": (10, int, _positive, "must be a positive integer"),
        "start": ("stationary", str, lambda v: v in ("stationary", "origin"),
                  "must be 'stationary' or 'origin'"),
        "write_paths": (20, int, _nonnegative, "must be a nonnegative integer"),
        "n_groups": (10, int, _positive, "must be a positive integer"),
    },
    "diagnostics": {
        "lags": ([0.5, 1.0, 2.0, 3.0, 5.0], list, lambda v: all(
            isinstance(x, _NUM) and x > 0 for x in v) and len(v) > 0,
                 "must be a nonempty list of positive numbers"),
        "window": (0.5, _NUM, _unit, "must lie in (0, 1]"),
        "n_permutations": (999, int, _positive, "must be a positive integer"),
        "max_n": (1000, int, lambda v: v >= 100, "must be an integer >= 100"),
        "z": (2.0, _NUM, _positive, "must be > 0"),
        "bump_width": (1.0, _NUM, _positive, "must be > 0"),
        "localization_samples": (20, int, _positive, "must be a positive integer"),
    },
    "io": {
        "solver": ("solve-pekar/solution.csv", str, None, ""),
        "polaron": (["sample-polaron"], list, None, ""),
        "g_estimates": (["estimate-g/g_estimate.json"], list, None, ""),
        "pekar": ("simulate-pekar", str, None, ""),
    },
}


def defaults():
    out = {"seed": 0}
    for section, keys in SCHEMA.items():
        out[section] = {k: copy.deepcopy(spec[0]) for k, spec in keys.items()}
    return out


def _locate(node, prefix, out):
    # record the source line of every mapping key in a composed YAML tree
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            name = f"{prefix}.{key.value}" if prefix else key.value
            out[name] = key.start_mark.line + 1
            _locate(value, name, out)


@dataclass
class RunConfig:
    """Validated parameters for every subcommand plus the root seed.

    ``origins`` maps dotted keys to where their value came from (a
    ``file:line`` string or a ``--set`` flag), used in error messages.
    """

    values: dict = field(default_factory=defaults)
    origins: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.values["seed"]

    def section(self, name):
        return dict(self.values[name])

    def where(self, key):
        return self.origins.get(key, "default")

    def to_yaml(self):
        return yaml.safe_dump(self.values, sort_keys=True)

    @classmethod
    def from_yaml(cls, text, source="<string>"):
        try:
            root = yaml.compose(text)
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{source}{line}: invalid YAML ({exc})") from exc
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError(f"{source}:1: top level must be a mapping")
        lines = {}
        _locate(root, "", lines)
        cfg = cls()
        cfg.origins = {k: f"{source}:{n}" for k, n in lines.items()}
        for key, value in data.items():
            if key == "seed":
                cfg.values["seed"] = value
                continue
            if key not in SCHEMA:
                raise ConfigError(f"{cfg.where(key)}: unknown section {key!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"{cfg.where(key)}: section {key!r} must be a mapping")
            for sub, v in value.items():
                dotted = f"{key}.{sub}"
                if sub not in SCHEMA[key]:
                    raise ConfigError(f"{cfg.where(dotted)}: unknown key {dotted!r}")
                cfg.values[key][sub] = v
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_yaml(path.read_text(), source=str(path))

    def override(self, assignment):
        """Apply one ``section.key=value`` override (value parsed as YAML)."""
        if "=" not in assignment:
            raise ConfigError(f"--set {assignment}: expected key=value")
        key, raw = assignment.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {assignment}: cannot parse value ({exc})") from exc
        if key == "seed":
            self.values["seed"] = value
        else:
            section, _, sub = key.partition(".")
            if section not in SCHEMA or sub not in SCHEMA[section]:
                raise ConfigError(f"--set {assignment}: unknown key {key!r}")
            self.values[section][sub] = value
        self.origins[key] = f"--set {assignment}"
        return self

    def validate(self):
        seed = self.values["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError(f"{self.where('seed')}: seed must be an unsigned 64-bit integer")
        for section, keys in SCHEMA.items():
            for sub, (_, types, check, message) in keys.items():
                dotted = f"{section}.{sub}"
                v = self.values[section][sub]
                ok_type = isinstance(v, types) and not isinstance(v, bool)
                if types == _NUM and isinstance(v, int) and not isinstance(v, bool):
                    ok_type = True
                if not ok_type:
                    raise ConfigError(f"{self.where(dotted)}: {dotted} has the wrong type "
                                      f"({type(v).__name__})")
                if check is not None and not check(v):
                    raise ConfigError(f"{self.where(dotted)}: {dotted} {message}")
        s = self.values["sampler"]
        if s["burn_in"] >= s["n_sweeps"]:
            raise ConfigError(f"{self.where('sampler.burn_in')}: sampler.burn_in must be "
                              "smaller than sampler.n_sweeps")
        return self
