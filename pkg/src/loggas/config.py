"""Experiment configuration: INI text with sections, round-trippable and hashable."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .errors import ConfigError

# (section, key, type, default, help); potential and xi have no default
SCHEMA = [
    ("experiment", "potential", "str", None, "catalog name (e.g. gaussian, two_cut_quartic(1.5)) or path to a '# loggas-potential v1' file"),
    ("experiment", "xi", "str", None, "test function: poly:c0,c1,... (power basis) or a two-column sample file"),
    ("experiment", "beta", "floats", "2", "comma-separated inverse temperatures"),
    ("experiment", "N", "ints", "64", "comma-separated particle numbers"),
    ("experiment", "output", "str", "loggas-out", "output directory (not part of the config hash)"),
    ("solver", "nodes", "int", "2048", "uniform grid size of the discrete energy minimisation"),
    ("sampler", "method", "str", "mcmc", "mcmc or tridiagonal (the latter only for V = x^2/2)"),
    ("sampler", "sweeps", "int", "20000", "recorded Metropolis sweeps per chain"),
    ("sampler", "burn_in", "int", "2000", "adaptation sweeps per chain, discarded"),
    ("sampler", "thinning", "int", "1", "record every k-th sweep"),
    ("sampler", "chains", "int", "2", "independent chains per (N, beta) cell"),
    ("sampler", "draws", "int", "10000", "exact draws per cell for the tridiagonal sampler"),
    ("sampler", "window", "str", "auto", "'auto' or 'lo,hi' proposal window"),
    ("sampler", "format", "str", "csv", "sample file format: csv or binary"),
    ("seeds", "seed", "int", "0", "master 64-bit seed"),
    ("tolerances", "euler_lagrange", "float", "1e-4", "max |zeta| on the support, relative to 1 + |c_V|"),
    ("tolerances", "dyson", "float", "1e-5", "Dyson residual"),
    ("tolerances", "splitting", "float", "1e-5", "splitting gap relative to N^2"),
    ("tolerances", "variance_identity", "float", "1e-5", "variance identity gap relative to 1 + v_xi"),
    ("tolerances", "conditions", "float", "1e-8", "orthogonality/Taylor residuals relative to 1 + sup|xi|"),
    ("tolerances", "ks_p", "float", "0.01", "minimum KS p-value"),
    ("tolerances", "variance_rel", "float", "0.15", "relative tolerance on the empirical variance"),
]

HASH_EXCLUDED = {("experiment", "output")}


def _parse(kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "floats":
            return [float(v) for v in raw.split(",") if v.strip()]
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {kind}") from exc


def _format(kind: str, value) -> str:
    if kind in ("ints", "floats"):
        return ",".join(repr(v) if kind == "floats" else str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def set(self, section: str, key: str, value):
        if (section, key) not in {(s, k) for s, k, *_ in SCHEMA}:
            raise ConfigError(f"unknown key [{section}] {key}")
        self.values[(section, key)] = value

    def serialize(self, include_excluded: bool = True) -> str:
        out = io.StringIO()
        current = None
        for section, key, kind, _, _ in SCHEMA:
            if not include_excluded and (section, key) in HASH_EXCLUDED:
                continue
            if section != current:
                if current is not None:
                    out.write("\n")
                out.write(f"[{section}]\n")
                current = section
            out.write(f"{key} = {_format(kind, self.values[(section, key)])}\n")
        return out.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.serialize(include_excluded=False).encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.serialize() == other.serialize()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive ("N")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {(s, k) for s, k, *_ in SCHEMA}
    for section in cp.sections():
        for key in cp[section]:
            if (section, key) not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
    values = {}
    for section, key, kind, default, _ in SCHEMA:
        if cp.has_option(section, key):
            values[(section, key)] = _parse(kind, cp[section][key])
        elif default is None:
            raise ConfigError(f"missing required key [{section}] {key}")
        else:
            values[(section, key)] = _parse(kind, default)
    return ExperimentConfig(values)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def default_config(potential: str, xi: str = "poly:0,1") -> ExperimentConfig:
    return parse_config(f"[experiment]\npotential = {potential}\nxi = {xi}\n")


def schema_text() -> str:
    lines = ["# loggas experiment config (INI).  Keys without a default are required.", ""]
    current = None
    for section, key, kind, default, help_ in SCHEMA:
        if section != current:
            lines.append(f"[{section}]")
            current = section
        d = "required" if default is None else f"default {default}"
        lines.append(f"  {key} ({kind}, {d}): {help_}")
    return "\n".join(lines) + "\n"
