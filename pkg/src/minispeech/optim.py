"""Adam with a warmup then inverse-square-root schedule.

Training keeps two independent optimizer instances, one over encoder
parameters and one over everything else; assert_partition checks that the
two groups tile the full parameter set. Parameters update in sorted-name
order so runs are bit-reproducible. A missing gradient counts as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    schedule: str = "noam"  # warmup then inverse-sqrt; "constant" skips both

    def __post_init__(self):
        if self.schedule not in ("noam", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


class Adam:
    def __init__(self, params: dict, config: OptimizerConfig):
        self.params = dict(sorted(params.items()))
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def rate(self, t: int | None = None) -> float:
        """Learning rate at 1-indexed step t (defaults to the upcoming step)."""
        cfg = self.config
        t = self.t + 1 if t is None else t
        if cfg.schedule == "constant":
            return cfg.learning_rate
        w = max(cfg.warmup_steps, 1)
        return cfg.learning_rate * min(t / w, np.sqrt(w / t))

    def step(self):
        self.t += 1
        lr = self.rate(self.t)
        cfg = self.config
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1 ** self.t)
            vhat = v / (1 - cfg.beta2 ** self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + cfg.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for name in self.params:
            out[f"m.{name}"] = self.m[name].copy()
            out[f"v.{name}"] = self.v[name].copy()
        return out

    def load_state_dict(self, state: dict):
        self.t = int(state["t"][0])
        for name in self.params:
            self.m[name] = state[f"m.{name}"].copy()
            self.v[name] = state[f"v.{name}"].copy()


def assert_partition(all_params: dict, *groups: dict):
    """Every parameter in exactly one group; raises naming the offenders."""
    seen: dict = {}
    for g in groups:
        for name in g:
            if name in seen:
                raise ValueError(f"parameter {name!r} appears in two optimizer groups")
            seen[name] = True
    missing = sorted(set(all_params) - set(seen))
    extra = sorted(set(seen) - set(all_params))
    if missing or extra:
        raise ValueError(f"optimizer groups do not tile the model: "
                         f"missing={missing[:5]}, unknown={extra[:5]}")
