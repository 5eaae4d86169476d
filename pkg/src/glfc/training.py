"""Training loop shared by the CLI and the estimator."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .dataset import dataset_iter
from .errors import ConfigError
from .losses import LOSSES
from .meunet import MEUNet, MEUNetConfig, build_model
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    arch: str = "meunet"
    loss: str = "mcl"
    lr: float = 0.02
    batch: int = 4
    epochs: int = 100
    steps: Optional[int] = None  # stop after this many updates if set
    seed: int = 0
    threads: int = 1
    size: int = 256
    channels: Tuple[int, ...] = (64, 128, 256)
    tokens: int = 1024
    vss_depths: Tuple[int, int] = (16, 8)
    embed_dims: Tuple[int, int] = (128, 256)
    state_dim: int = 8

    def validate(self) -> "RunConfig":
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch < 1 or self.epochs < 1:
            raise ConfigError("batch and epochs must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.model_config().validate()
        return self

    def model_config(self) -> MEUNetConfig:
        return MEUNetConfig(variant=self.arch, channels=tuple(self.channels),
                            token_count=self.tokens, vss_depths=tuple(self.vss_depths),
                            embed_dims=tuple(self.embed_dims), state_dim=self.state_dim,
                            input_size=self.size)

    def to_kv(self) -> Dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(i) for i in v)
            out[k] = "" if v is None else str(v)
        return out

    @classmethod
    def from_kv(cls, kv: Dict[str, str]) -> "RunConfig":
        """Parse key=value strings; unknown keys are a config error."""
        types = {f.name: f for f in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            default = types[k].default
            try:
                if isinstance(default, tuple):
                    out[k] = tuple(int(i) for i in v.split(",") if i.strip())
                elif k == "steps":
                    out[k] = int(v) if v else None
                elif isinstance(default, bool):
                    out[k] = v.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    out[k] = int(v)
                elif isinstance(default, float):
                    out[k] = float(v)
                else:
                    out[k] = v
            except ValueError:
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        return cls(**out)


@dataclass
class StepLog:
    step: int
    epoch: int
    total: float
    terms: Dict[str, float] = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"step={self.step}", f"epoch={self.epoch}", f"total={self.total:.8e}"]
        if len(self.terms) > 1:
            parts += [f"{k}={v:.8e}" for k, v in self.terms.items()]
        return " ".join(parts)


def train(model: MEUNet, x: np.ndarray, y: np.ndarray, run: RunConfig,
          callback: Optional[Callable[[StepLog], None]] = None) -> List[StepLog]:
    """Fit ``model`` on normalised slices x -> y ([N,1,S,S]) with Adam."""
    loss_fn = LOSSES[run.loss]
    opt = Adam(model.parameters(), lr=run.lr)
    dtype = model.dtype
    history: List[StepLog] = []
    step = 0
    for epoch in range(run.epochs):
        for xb, yb in dataset_iter(x, y, batch=run.batch, seed=run.seed, epoch=epoch):
            opt.zero_grad()
            pred = model(Tensor(xb.astype(dtype)))
            loss, terms = loss_fn(pred, Tensor(yb.astype(dtype)))
            loss.backward()
            opt.step()
            step += 1
            rec = StepLog(step, epoch, loss.item(), terms)
            history.append(rec)
            if callback is not None:
                callback(rec)
            if run.steps is not None and step >= run.steps:
                return history
    return history


def fit_new(x: np.ndarray, y: np.ndarray, run: RunConfig,
            callback: Optional[Callable[[StepLog], None]] = None) -> Tuple[MEUNet, List[StepLog]]:
    run.validate()
    model = build_model(run.model_config(), seed=run.seed)
    return model, train(model, x, y, run, callback)
