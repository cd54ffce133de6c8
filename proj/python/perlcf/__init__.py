"""Car-following trajectory prediction: physics models, recurrent nets and PERL."""

import json

from . import _core
from ._core import ConfigError, DataError, NumericError, ParseError, interpolate_series, reconstruct_speed

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ParseError",
    "cli",
    "extract_jsonl",
    "fvd_accel",
    "gradient_check",
    "idm_accel",
    "interpolate_series",
    "reconstruct_speed",
    "synth_csv",
]


def _text(config):
    return "" if config is None else json.dumps(config)


def idm_accel(v, dv, gap, params=None):
    return _core.idm_accel(v, dv, gap, _text(params))


def fvd_accel(v, dv, gap, params=None):
    return _core.fvd_accel(v, dv, gap, _text(params))


def synth_csv(config=None):
    return _core.synth_csv(_text(config))


def extract_jsonl(csv, dataset=None):
    return _core.extract_jsonl(csv, _text(dataset))


def gradient_check(cell="lstm", dropout=0.0, activation="linear", seed=7):
    return _core.gradient_check(cell, dropout, activation, seed)


def cli(*args):
    """Run the command-line tool in-process. Returns (exit_code, stdout, stderr)."""
    return _core.cli([str(a) for a in args])
