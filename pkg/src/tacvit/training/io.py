"""Model checkpoints: TVT1 tensors plus a plain-text sidecar with family and settings."""

from __future__ import annotations

from pathlib import Path

from ..config import Settings, from_text, parse_kv, to_text
from ..errors import StorageError
from ..models import ModelParams
from ..numcore import load_checkpoint, save_checkpoint


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".cfg")


def save_model(path, params: ModelParams, family: str, settings: Settings) -> None:
    save_checkpoint(path, params.state_dict())
    try:
        sidecar_path(path).write_text(f"family={family}\n" + to_text(settings))
    except OSError as exc:
        raise StorageError(f"cannot write {sidecar_path(path)}: {exc}") from exc


def load_model(path, trainable: bool = True) -> tuple[ModelParams, str | None, Settings | None]:
    """Parameters, and family/settings when a sidecar exists next to the checkpoint."""
    params = ModelParams.from_state(load_checkpoint(path), trainable)
    side = sidecar_path(path)
    if not side.is_file():
        return params, None, None
    lines = side.read_text().splitlines()
    family = parse_kv(lines[0]).get("family") if lines else None
    return params, family, from_text("\n".join(lines[1:]))
