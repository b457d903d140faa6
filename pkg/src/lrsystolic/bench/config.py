"""Experiment configuration: a flat JSON object with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from ..detection import DetectorKind
from ..errors import ConfigError
from ..reduction import Algorithm, Condition

DESK_M_GRID = [4, 6, 8, 10, 12]
FULL_M_GRID = [4, 6, 8, 10, 12, 14, 16]
QAM_ORDERS = (4, 16, 64)
QRD_MODES = ("qrd", "sqrd")

# fields that never change results and are left out of the config hash
_UNHASHED = ("out", "workers")


def _grid_value(v):
    if isinstance(v, str) and v.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"Eb/N0 grid entries must be numbers or \"inf\", got {v!r}")
    return float(v)


@dataclass
class ExperimentConfig:
    m: int = 4
    n: int | None = None
    qam_order: int = 4
    eb_n0_db_grid: list = field(default_factory=lambda: [8.0, 12.0, 16.0])
    trials: int = 10_000
    seed: int = 12345
    delta: float = 0.99
    algorithms: list = field(default_factory=lambda: ["fsr", "aslr"])
    condition: str | None = None
    qrd: str = "qrd"
    detectors: list = field(default_factory=lambda: ["mmse", "lr-mmse", "ml"])
    m_grid: list = field(default_factory=lambda: list(DESK_M_GRID))
    deltas: list = field(default_factory=lambda: [0.51, 0.75, 0.99])
    clll_deltas: list = field(default_factory=lambda: [0.75, 0.99])
    scaling_eb_n0_db: float = 20.0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def receive(self) -> int:
        return self.m if self.n is None else self.n

    def validate(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        need(is_int(self.m) and self.m >= 1, f"m must be a positive integer, got {self.m!r}")
        need(self.n is None or (is_int(self.n) and self.n >= self.m),
             f"n must be an integer >= m, got {self.n!r}")
        need(self.qam_order in QAM_ORDERS, f"qam_order must be one of {QAM_ORDERS}")
        need(isinstance(self.eb_n0_db_grid, list), "eb_n0_db_grid must be a list")
        self.eb_n0_db_grid = [_grid_value(v) for v in self.eb_n0_db_grid]
        need(is_int(self.trials) and self.trials >= 0, "trials must be a nonnegative integer")
        need(is_int(self.seed) and 0 <= self.seed < 2**128, "seed must be an integer in [0, 2^128)")
        for d in [self.delta, *self.deltas, *self.clll_deltas]:
            need(isinstance(d, (int, float)) and 0.5 < d < 1.0, f"delta must lie in (1/2, 1), got {d!r}")
        need(isinstance(self.algorithms, list) and self.algorithms, "algorithms must be a nonempty list")
        try:
            algs = [Algorithm(a) for a in self.algorithms]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.condition is not None:
            try:
                cond = Condition(self.condition)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if cond is Condition.LOVASZ and any(a is not Algorithm.CLLL for a in algs):
                raise ConfigError("fsr and aslr use the Siegel condition; lovasz is only valid with clll")
        need(self.qrd in QRD_MODES, f"qrd must be one of {QRD_MODES}")
        try:
            [DetectorKind(d) for d in self.detectors]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        need(isinstance(self.m_grid, list) and self.m_grid and all(is_int(v) and v >= 2 for v in self.m_grid),
             "m_grid must be a nonempty list of integers >= 2")
        need(isinstance(self.scaling_eb_n0_db, (int, float)), "scaling_eb_n0_db must be a number")
        need(is_int(self.workers) and self.workers >= 1, "workers must be a positive integer")

    # serialization
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eb_n0_db_grid"] = ["inf" if math.isinf(v) else v for v in self.eb_n0_db_grid]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        return type(self).from_dict(data)

    def digest(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
