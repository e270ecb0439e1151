"""Shared neural-network plumbing: seeded init and checkpoint archives.

Checkpoints are single ``.npz`` archives mapping layer-path strings to
arrays, plus a ``__meta__`` JSON header carrying the kind of network and
the config needed to rebuild it. The same format is used for the
generator, the discriminator (including its power-iteration vectors,
which ride along as buffers) and the phase denoiser.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict

import numpy as np
import torch

from .errors import ConfigError

META_KEY = "__meta__"


def seed_all(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def init_params(module: torch.nn.Module, seed: int) -> None:
    """Kaiming-style fan-in uniform init for weights, zeros for biases.

    Deterministic given the seed; iteration follows parameter
    registration order, which is fixed by module construction.
    """
    gen = seed_all(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.dim() >= 2:
                fan_in = p.shape[1] * (p[0, 0].numel() if p.dim() > 2 else 1)
                bound = math.sqrt(6.0 / max(fan_in, 1))
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()


def save_checkpoint(path, module: torch.nn.Module, kind: str, config) -> None:
    """Write module parameters and buffers to a portable npz archive."""
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }
    meta = {"format": 1, "kind": kind, "config": asdict(config)}
    arrays[META_KEY] = np.array(json.dumps(meta))
    np.savez(str(path), **arrays)


def load_checkpoint(path, expect_kind: str | None = None) -> tuple[dict, dict]:
    """Return (meta dict, name -> array dict) from an archive."""
    try:
        with np.load(str(path), allow_pickle=False) as zf:
            if META_KEY not in zf:
                raise ConfigError(f"{path}: not a checkpoint archive (missing header)")
            meta = json.loads(str(zf[META_KEY]))
            arrays = {k: zf[k] for k in zf.files if k != META_KEY}
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise ConfigError(
            f"{path}: expected a {expect_kind!r} checkpoint, got {meta.get('kind')!r}"
        )
    return meta, arrays


def restore_state(module: torch.nn.Module, arrays: dict) -> None:
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def count_finite(module: torch.nn.Module) -> bool:
    """True when every parameter is finite."""
    return all(torch.isfinite(p).all().item() for p in module.parameters())
