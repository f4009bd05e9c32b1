"""Run configuration: one flat dataclass, one key=value file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class RunConfig:
    # feature dimensions
    d: int = 64
    d_m: int = 64
    n_layers: int = 3
    n_heads: int = 8
    # projection
    image_size: int = 64
    tau_density: float = 1.0
    k_blur: float = 4.0
    # backbone preset and training-time view augmentation
    backbone: str = "default"
    augment: bool = True
    train_views: int = 6        # random views per sample during training
    # losses
    tau_sim: float = 0.1
    epsilon: float = 1e-2       # soft-rank regularization during training
    delta: float = 1.0          # confidence scale factor
    lambda1: float = 1.0        # distribution loss weight
    lambda2: float = 1.0        # boundary loss weight
    lambda3: float = 1.0        # quality-aware loss weight
    cls_loss: str = "bce"       # summed one-vs-all BCE; "ce" for categorical
    # optimization
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 5.0      # global gradient-norm clip; 0 disables
    epochs: int = 50
    k_support: int = 6          # support samples per quality level
    k_query: int = 15           # query samples per episode
    # evaluation
    folds: int = 5
    seed: int = 0
    # dataset scale (MOS bounds of the manifest)
    scale_min: float = 0.0
    scale_max: float = 100.0

    def validate(self) -> "RunConfig":
        positive = ["d", "d_m", "n_layers", "n_heads", "image_size",
                    "tau_density", "tau_sim", "epsilon", "delta", "lr",
                    "epochs", "k_support", "k_query", "folds"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        for name in ["k_blur", "weight_decay", "lambda1", "lambda2", "lambda3"]:
            if getattr(self, name) < 0:
                raise ValueError(f"config field {name} must be nonnegative")
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if self.cls_loss not in ("bce", "ce"):
            raise ValueError("cls_loss must be 'bce' or 'ce'")
        if not 1 <= self.train_views <= 6:
            raise ValueError("train_views must be in 1..6")
        from .features import BACKBONE_PRESETS
        if self.backbone not in BACKBONE_PRESETS:
            raise ValueError(f"unknown backbone preset {self.backbone!r}; "
                             f"choose from {sorted(BACKBONE_PRESETS)}")
        if self.scale_min >= self.scale_max:
            raise ValueError("scale_min must be < scale_max")
        return self


def save_config(config: RunConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in asdict(config).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _coerce(ftype, raw: str):
    if ftype is bool:
        return raw.lower() in ("1", "true", "yes")
    return ftype(raw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a key=value config file, then apply overrides on top."""
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            values[key] = raw
    if overrides:
        values.update({k: str(v) for k, v in overrides.items()})
    types = {f.name: f.type for f in fields(RunConfig)}
    pytypes = {"int": int, "float": float, "str": str, "bool": bool}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        t = types[key]
        t = pytypes[t] if isinstance(t, str) else t
        kwargs[key] = _coerce(t, raw)
    return RunConfig(**kwargs).validate()
