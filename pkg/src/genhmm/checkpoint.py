"""Versioned model and training-state checkpoints.

Checkpoints are self-describing JSON documents.  Every real number is
written with 17 significant decimal digits, which identifies an IEEE-754
double uniquely, so save/load round trips are bit-exact.  Arrays carry
an explicit shape header.  Files are written atomically (temp + rename).
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .flow import CouplingLayer, FlowGenerator
from .gmm import GmmHmm
from .hmm import HmmCore
from .model import GenHmm, TrainConfig, TrainState
from .nn import DenseNet

__all__ = [
    "CheckpointError",
    "dumps_exact",
    "atomic_write",
    "save_model",
    "load_model",
    "save_train_state",
    "load_train_state",
    "config_hash",
]

FORMAT = "genhmm-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, mismatched, or unsupported checkpoint document."""


# ---------------------------------------------------------------------------
# exact-decimal writer

def _write(obj, out):
    if obj is None:
        out.write("null")
    elif obj is True:
        out.write("true")
    elif obj is False:
        out.write("false")
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            raise CheckpointError(f"cannot serialize non-finite value {v}")
        out.write(format(v, ".17g"))
    elif isinstance(obj, dict):
        out.write("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                out.write(",")
            out.write(json.dumps(str(key)))
            out.write(":")
            _write(val, out)
        out.write("}")
    elif isinstance(obj, (list, tuple)):
        out.write("[")
        for i, val in enumerate(obj):
            if i:
                out.write(",")
            _write(val, out)
        out.write("]")
    else:
        raise CheckpointError(f"cannot serialize {type(obj).__name__}")


def dumps_exact(obj):
    """Serialize to JSON text with floats at 17 significant digits."""
    out = io.StringIO()
    _write(obj, out)
    return out.getvalue()


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# array documents

def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.tolist()}


def _unarr(doc):
    shape = tuple(int(d) for d in doc["shape"])
    data = np.array(doc["data"], dtype=np.float64)
    if data.shape != shape:
        raise CheckpointError(
            f"array data has shape {data.shape}, header says {shape}")
    return data


# ---------------------------------------------------------------------------
# nets and generators

def _net_doc(net):
    return {"dims": list(net.dims),
            "weights": [_arr(w) for w in net.weights],
            "biases": [_arr(b) for b in net.biases]}


def _net_from(doc):
    net = object.__new__(DenseNet)
    net.dims = [int(d) for d in doc["dims"]]
    net.weights = [_unarr(w) for w in doc["weights"]]
    net.biases = [_unarr(b) for b in doc["biases"]]
    return net


def _gen_doc(gen):
    return {"n_dim": gen.n_dim,
            "layers": [{"swap": layer.swap,
                        "scale_net": _net_doc(layer.scale_net),
                        "shift_net": _net_doc(layer.shift_net)}
                       for layer in gen.layers]}


def _gen_from(doc):
    gen = object.__new__(FlowGenerator)
    gen.n_dim = int(doc["n_dim"])
    gen.layers = []
    for layer_doc in doc["layers"]:
        layer = object.__new__(CouplingLayer)
        layer.n_dim = gen.n_dim
        layer.split = gen.n_dim // 2
        layer.swap = bool(layer_doc["swap"])
        layer.scale_net = _net_from(layer_doc["scale_net"])
        layer.shift_net = _net_from(layer_doc["shift_net"])
        gen.layers.append(layer)
    return gen


# ---------------------------------------------------------------------------
# models

def _model_doc(model):
    doc = {"format": FORMAT, "version": VERSION, "kind": model.kind,
           "label": model.label,
           "n_states": model.n_states, "n_comp": model.n_comp,
           "n_dim": model.n_dim,
           "startprob": _arr(model.core.startprob),
           "transmat": _arr(model.core.transmat),
           "mix": _arr(model.mix)}
    if model.kind == "genhmm":
        doc["generators"] = [[_gen_doc(g) for g in row] for row in model.gens]
    elif model.kind == "gmmhmm":
        doc["means"] = _arr(model.means)
        doc["variances"] = _arr(model.variances)
    else:
        raise CheckpointError(f"unknown model kind {model.kind!r}")
    return doc


def _model_from(doc):
    if doc.get("format") != FORMAT:
        raise CheckpointError("not a model checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    core = HmmCore(_unarr(doc["startprob"]), _unarr(doc["transmat"]))
    mix = _unarr(doc["mix"])
    kind = doc.get("kind")
    if kind == "genhmm":
        gens = [[_gen_from(g) for g in row] for row in doc["generators"]]
        return GenHmm(doc["label"], core, mix, gens)
    if kind == "gmmhmm":
        return GmmHmm(doc["label"], core, mix,
                      _unarr(doc["means"]), _unarr(doc["variances"]))
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_model(model, path):
    atomic_write(path, dumps_exact(_model_doc(model)) + "\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return _model_from(doc)


# ---------------------------------------------------------------------------
# training state (model + optimizer moments + history)

def config_hash(config):
    """Stable fingerprint of a TrainConfig plus optional extra fields."""
    if isinstance(config, TrainConfig):
        config = vars(config)
    text = ",".join(f"{k}={config[k]!r}" for k in sorted(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _adam_doc(state):
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "step_count": state.step_count,
            "m": [_arr(a) for a in state.m], "v": [_arr(a) for a in state.v]}


def _adam_into(doc, state):
    state.lr = float(doc["lr"])
    state.beta1 = float(doc["beta1"])
    state.beta2 = float(doc["beta2"])
    state.eps = float(doc["eps"])
    state.step_count = int(doc["step_count"])
    state.m = [_unarr(a) for a in doc["m"]]
    state.v = [_unarr(a) for a in doc["v"]]


def save_train_state(model, state, path):
    doc = {"format": FORMAT, "version": VERSION, "kind": "train-state",
           "config": {k: v for k, v in vars(state.config).items()},
           "config_hash": config_hash(state.config),
           "em_iter": state.em_iter,
           "history_frame": list(state.history_frame),
           "history_seq": list(state.history_seq),
           "n_degenerate": state.n_degenerate,
           "n_skipped_terms": state.n_skipped_terms,
           "n_rejected_updates": state.n_rejected_updates,
           "monotone_violations": [[int(i), float(d)]
                                   for i, d in state.monotone_violations],
           "model": _model_doc(model)}
    if model.kind == "genhmm":
        doc["adam"] = [[[{"scale": _adam_doc(s), "shift": _adam_doc(t)}
                         for s, t in fa.pairs] for fa in row]
                       for row in state.adam]
    atomic_write(path, dumps_exact(doc) + "\n")


def load_train_state(path):
    """Returns ``(model, state)`` ready for :func:`model.resume_train`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if doc.get("kind") != "train-state":
        raise CheckpointError(f"{path}: not a training-state checkpoint")
    model = _model_from(doc["model"])
    config = TrainConfig(**doc["config"])
    state = TrainState(model, config)
    state.em_iter = int(doc["em_iter"])
    state.history_frame = [float(v) for v in doc["history_frame"]]
    state.history_seq = [float(v) for v in doc["history_seq"]]
    state.n_degenerate = int(doc["n_degenerate"])
    state.n_skipped_terms = int(doc["n_skipped_terms"])
    state.n_rejected_updates = int(doc["n_rejected_updates"])
    state.monotone_violations = [(int(i), float(d))
                                 for i, d in doc["monotone_violations"]]
    if model.kind == "genhmm":
        for row, row_doc in zip(state.adam, doc["adam"]):
            for fa, fa_doc in zip(row, row_doc):
                for (scale_state, shift_state), pair_doc in zip(fa.pairs, fa_doc):
                    _adam_into(pair_doc["scale"], scale_state)
                    _adam_into(pair_doc["shift"], shift_state)
    return model, state
