"""Fit and predict over a lowered program, plus artifact export."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import ExecError, FitError, PredError
from ..lowering import LoweredProgram
from ..relmodel import Database, EmbeddedRelation
from ..tensor import Key, ParameterStore, Tape, optimizer_step
from .physical import Executor, compile_physical

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    epochs: int = 100
    lr: float = 0.01
    weight_decay: float = 0.0
    optimizer: str = "adam"
    seed: int | None = None  # accepted for completeness; full-batch fitting draws no randomness

    @classmethod
    def from_kwargs(cls, kwargs: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(kwargs) - known)
        if unknown:
            raise FitError(f"unknown fit argument(s) {', '.join(unknown)}; expected {', '.join(sorted(known))}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if isinstance(self.epochs, float) and self.epochs.is_integer():
            self.epochs = int(self.epochs)
        if not isinstance(self.epochs, int) or isinstance(self.epochs, bool) or self.epochs < 0:
            raise FitError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.lr, (int, float)) or not self.lr > 0:
            raise FitError(f"lr must be positive, got {self.lr!r}")
        if not isinstance(self.weight_decay, (int, float)) or self.weight_decay < 0:
            raise FitError(f"weight_decay must be non-negative, got {self.weight_decay!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise FitError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        self.lr = float(self.lr)
        self.weight_decay = float(self.weight_decay)


@dataclass
class FitResult:
    target: str
    trace: list[float] = field(default_factory=list)
    keys: list[Key] = field(default_factory=list)
    unreachable: list[Key] = field(default_factory=list)


class Session:
    """A lowered program bound to a database and a parameter store."""

    def __init__(self, program: LoweredProgram, db: Database, store: ParameterStore | None = None):
        self.program = program
        self.db = db
        self.store = store if store is not None else program.store
        self._executors: dict[str, Executor] = {}

    def executor(self, target: str) -> Executor:
        ex = self._executors.get(target)
        if ex is None:
            ex = Executor(compile_physical(self.program.plan(target)), self.db)
            self._executors[target] = ex
        return ex

    def evaluate(self, target: str) -> EmbeddedRelation:
        if target not in self.program.graph.names:
            raise PredError(f"undefined relation {target!r}")
        return self.executor(target).evaluate(self.store)

    def plan_keys(self, target: str) -> list[Key]:
        """Parameters the target's plan can reach: layer weights and learnable tuples."""
        plan = self.program.plan(target)
        keys = [k for k, _ in plan.params()]
        for node in plan.nodes():
            if node.op == "leaf" and node.relation in self.db:
                keys.extend(self.db[node.relation].learnable or ())
        seen: dict[Key, None] = {}
        for k in keys:
            seen.setdefault(k, None)
        return list(seen)

    def loss_value(self, target: str):
        rel = self.executor(target).evaluate(self.store)
        if rel.k != 0 or rel.d != 1:
            raise FitError(f"loss relation {target!r} must have no content attributes and width 1, "
                           f"got k={rel.k}, d={rel.d}")
        if len(rel) == 0:
            raise FitError(f"empty loss: {target!r} derived no tuple")
        return rel.emb

    def fit(self, target: str, config: FitConfig) -> FitResult:
        if target not in self.program.graph.names:
            raise FitError(f"undefined relation {target!r}")
        node = self.program.graph[self.program.graph.names[target]]
        if node.k != 0 or node.dim != 1:
            raise FitError(f"loss relation {target!r} must have no content attributes and width 1, "
                           f"got k={node.k}, d={node.dim}")
        keys = self.plan_keys(target)
        result = FitResult(target, keys=keys)
        result.unreachable = [k for k in self.store.keys() if k not in set(keys)]
        if not keys:
            raise FitError(f"no parameter reaches {target!r}")
        if result.unreachable:
            log.warning("fit %s: %d parameter(s) do not reach the loss", target, len(result.unreachable))
        for _ in range(config.epochs):
            self.store.zero_grad()
            with Tape() as tape:
                loss = self.loss_value(target)
            value = float(loss.data[0, 0])
            if not math.isfinite(value):
                raise FitError(f"loss became {value} after {len(result.trace)} epoch(s)")
            result.trace.append(value)
            if loss.requires_grad:
                tape.backward(loss)
            grads = self.store.gradients(keys)
            optimizer_step(self.store, grads, config.lr, config.weight_decay, config.optimizer)
        return result

    def predict(self, target: str) -> EmbeddedRelation:
        try:
            return self.evaluate(target)
        except ExecError as exc:
            raise PredError(str(exc)) from None


# ----------------------------------------------------------------------------
# export
# ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def relation_csv_rows(rel: EmbeddedRelation) -> list[list[str]]:
    header = list(rel.attrs) + [f"emb_{j}" for j in range(rel.d)]
    out = [header]
    data = rel.emb.data
    for i, row in enumerate(rel.rows):
        out.append([_fmt(v) for v in row] + [_fmt(x) for x in data[i]])
    return out


def write_relation_csv(rel: EmbeddedRelation, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(relation_csv_rows(rel))


def write_loss_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in trace:
            fh.write(format(v, ".17g") + "\n")


def artifact_path(out_dir, stem: str, ext: str, used: dict) -> str:
    """``Profile.csv``, then ``Profile.2.csv`` for a second export of the same relation."""
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in stem)
    count = used.get((safe, ext), 0) + 1
    used[(safe, ext)] = count
    name = f"{safe}{ext}" if count == 1 else f"{safe}.{count}{ext}"
    return os.path.join(out_dir, name)
