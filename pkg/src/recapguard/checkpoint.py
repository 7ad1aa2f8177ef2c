"""Single-file weight checkpoint container.

Layout: a zip archive in NumPy .npz format holding
  * ``meta``          -- JSON string (format tag, config echo, config hash,
                        weight-derived version string, trained flag)
  * ``tensor/<name>`` -- one array per state-dict entry, including batch-norm
                        running statistics

Loaders reject containers whose config hash or weight hash does not match
the stored values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .detector import Model, ModelConfig, EdgeEnhancedNet, weight_version
from .errors import CheckpointError

FORMAT_TAG = "recapguard-ckpt/1"


def config_hash(cfg: ModelConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_checkpoint(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.version = weight_version(model.net)
    meta = {
        "format": FORMAT_TAG,
        "config": asdict(model.config),
        "config_hash": config_hash(model.config),
        "version": model.version,
        "trained": model.trained,
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for name, tensor in model.net.state_dict().items():
        arrays[f"tensor/{name}"] = tensor.detach().cpu().contiguous().numpy()
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            if "meta" not in data:
                raise CheckpointError(f"{path}: missing meta entry")
            meta = json.loads(str(data["meta"]))
            tensors = {
                key[len("tensor/"):]: np.array(data[key])
                for key in data.files
                if key.startswith("tensor/")
            }
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None

    if meta.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unknown checkpoint format")
    cfg = ModelConfig(**meta["config"])
    if config_hash(cfg) != meta.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch")

    net = EdgeEnhancedNet(cfg)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: state mismatch ({exc})") from None
    net = net.to(memory_format=torch.channels_last)
    net.eval()

    version = weight_version(net)
    if version != meta.get("version"):
        raise CheckpointError(f"{path}: weight hash mismatch")
    return Model(net=net, config=cfg, version=version, trained=bool(meta["trained"]))
