"""Binary checkpoint container.

Layout::

    INCDST-CKPT\\n
    <one-line JSON header>\\n
    <tensors in header order, little-endian float64, C order>

The header carries the format version, the model configuration, the
component spec, the vocabulary and the name/shape of every tensor.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import nn
from .data import Vocabulary
from .errors import ConfigurationError, OrderingError, ParseError
from .model import PARAM_ORDER, ComponentSpec, ModelConfig, TrackerEnsemble, TrackerModel

MAGIC = b"INCDST-CKPT\n"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"


def write_container(path, header: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = [{"name": n, "shape": list(t.shape)} for n, t in tensors]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format version {header.get('format_version')}")
        payload = fh.read()
    tensors, offset = {}, 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise ParseError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise ParseError(f"{path}: {len(payload) - offset} trailing bytes")
    return header, tensors


def save_model(model: TrackerModel, path, meta: dict | None = None) -> None:
    header = {
        "kind": "tracker",
        "config": model.config.to_json(),
        "spec": model.spec.to_json(),
        "vocab": model.vocab.tokens[1:],
        "meta": meta or {},
    }
    write_container(path, header, [(n, model.params[n].value) for n in PARAM_ORDER])


def load_model(path, vocab: Vocabulary | None = None) -> TrackerModel:
    header, tensors = read_container(path)
    if header.get("kind") != "tracker":
        raise ParseError(f"{path}: not a tracker checkpoint")
    file_vocab = Vocabulary(header["vocab"])
    if vocab is None:
        vocab = file_vocab
    elif vocab != file_vocab:
        raise ConfigurationError(f"{path}: vocabulary differs from the ensemble's")
    params = {n: nn.Parameter(tensors[n]) for n in PARAM_ORDER}
    return TrackerModel(ModelConfig(**header["config"]), ComponentSpec.from_json(header["spec"]), vocab, params)


def save_ensemble(ensemble: TrackerEnsemble, directory, meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, model in ensemble.models.items():
        fname = f"{name}.ckpt"
        save_model(model, directory / fname, (meta or {}).get(name))
        files[name] = fname
    manifest = {
        "format_version": FORMAT_VERSION,
        "components": list(ensemble.components),
        "files": files,
        "fingerprint": ensemble.fingerprint(),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / MANIFEST


def load_ensemble(directory) -> TrackerEnsemble:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise OrderingError(f"no tracker checkpoints in {directory}; run `train` first")
    manifest = json.loads(manifest_path.read_text())
    vocab = None
    models = {}
    for name in manifest["components"]:
        model = load_model(directory / manifest["files"][name], vocab)
        vocab = model.vocab
        models[name] = model
    ensemble = TrackerEnsemble(models)
    if ensemble.fingerprint() != manifest["fingerprint"]:
        raise ConfigurationError(f"{directory}: checkpoint contents do not match manifest fingerprint")
    return ensemble


def read_meta(path) -> dict:
    return read_container(path)[0].get("meta", {})
