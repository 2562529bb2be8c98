"""Named-tensor checkpoint archive with a JSON config header, versioned."""

import json

import numpy as np

from .exceptions import DataFormatError
from .model import DetectionModel, ModelConfig

CHECKPOINT_VERSION = 1
_PARAM_PREFIX = "param:"


def save_checkpoint(path, model, seed=0, extra=None):
    """Write model weights plus config/seed metadata to an .npz archive."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": int(seed),
    }
    if extra:
        meta["extra"] = extra
    arrays = {_PARAM_PREFIX + k: v for k, v in model.state_dict().items()}
    path = str(path)
    if not path.endswith(".npz"):
        path += ".npz"
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path):
    """Rebuild the model from an archive; returns (model, meta)."""
    try:
        data = np.load(str(path))
    except (FileNotFoundError, OSError) as e:
        raise DataFormatError(f"cannot read checkpoint {path}: {e}") from e
    if "__meta__" not in data:
        raise DataFormatError(f"{path} is not a checkpoint archive")
    meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"unsupported checkpoint version {meta.get('format_version')}"
        )
    config = ModelConfig.from_dict(meta["config"])
    model = DetectionModel(config, rng=np.random.default_rng(0))
    state = {
        k[len(_PARAM_PREFIX) :]: data[k] for k in data.files if k.startswith(_PARAM_PREFIX)
    }
    model.load_state_dict(state)
    return model, meta
