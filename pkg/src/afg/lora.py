"""Low-rank adapters over ParamStore weight matrices.

An attached adapter freezes the base matrix W and trains a pair
(down: d_in x r, up: r x d_out); the forward path sees
W + (alpha/r) * down @ up. Zero-initialized `up` makes a fresh adapter an
exact no-op, and merging folds the product back into W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm


@dataclass
class LoraAdapter:
    target: str
    r: int
    alpha: float
    base_trainable: bool

    @property
    def down_name(self) -> str:
        return f"{self.target}.lora_down"

    @property
    def up_name(self) -> str:
        return f"{self.target}.lora_up"

    @property
    def scaling(self) -> float:
        return self.alpha / self.r


def attach_lora(
    store: nm.ParamStore,
    targets: list[str],
    r: int,
    alpha: float,
    rng: np.random.Generator,
):
    """Attach adapters to the named weight matrices; bases become frozen."""
    if r < 1:
        raise ValueError("LoRA rank must be >= 1")
    for name in targets:
        if name not in store:
            raise ValueError(f"LoRA target {name!r} not in parameter store")
        if name in store.adapters:
            raise ValueError(f"LoRA adapter already attached to {name!r}")
        if not name.endswith(".w"):
            raise ValueError(f"LoRA target {name!r} must be a linear weight (name ending in '.w')")
        base = store[name]
        if base.data.ndim != 2:
            raise ValueError(f"LoRA target {name!r} is not a matrix")
        d_in, d_out = base.data.shape
        adapter = LoraAdapter(target=name, r=r, alpha=alpha, base_trainable=base.requires_grad)
        store.add(adapter.down_name, rng.normal(0.0, 0.02, size=(d_in, r)))
        store.add(adapter.up_name, np.zeros((r, d_out)))
        store.set_trainable(name, False)
        store.adapters[name] = adapter


def effective_weight(store: nm.ParamStore, name: str) -> nm.Tensor:
    """The weight a forward pass should use: base, or base + scaled low-rank delta."""
    base = store[name]
    adapter = store.adapters.get(name)
    if adapter is None:
        return base
    delta = nm.scale(nm.matmul(store[adapter.down_name], store[adapter.up_name]), adapter.scaling)
    return nm.add(base, delta)


def merge_lora(store: nm.ParamStore):
    """Fold every adapter into its base weight and remove the adapter params."""
    for name in sorted(store.adapters):
        adapter = store.adapters[name]
        down = store[adapter.down_name].data
        up = store[adapter.up_name].data
        store[name].data += adapter.scaling * (down @ up)
        store.remove(adapter.down_name)
        store.remove(adapter.up_name)
        store.set_trainable(name, adapter.base_trainable)
    store.adapters.clear()


def adapter_param_count(store: nm.ParamStore) -> int:
    """Total trainable adapter parameters: sum of r * (d_in + d_out)."""
    total = 0
    for adapter in store.adapters.values():
        total += store[adapter.down_name].data.size + store[adapter.up_name].data.size
    return total
