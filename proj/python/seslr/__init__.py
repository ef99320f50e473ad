"""Spiking continual learning with bit-packed latent replay."""

import json as _json

try:
    from ._seslr import *  # wheel layout: the extension sits inside the package
    from . import _seslr as _ext
except ImportError:  # flat build-tree layout used by the cmake dev build
    from _seslr import *  # type: ignore
    import _seslr as _ext

__version__ = "0.1.0"


def run_experiment(config):
    """Run one experiment; `config` is a dict or a json string. Returns the
    metrics report as a dict."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(_ext.run_experiment_json(text))


def noise_sweep(config, sigmas):
    """FAA per sleep-noise scale with shared pretraining. Returns a list of
    (sigma, faa) pairs."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _ext.noise_sweep_json(text, list(sigmas))
