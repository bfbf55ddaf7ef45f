"""Training loop, perplexity evaluation and the Adam -> ASGD schedule."""

from __future__ import annotations

import contextlib
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import torch
import torch.nn as nn
from tqdm import tqdm

from .checkpoint import save_checkpoint
from .config import RunConfig
from .corpus import Vocabulary, Window
from .errors import TrainingDivergedError
from .lm import CarriedState, LanguageModel, joint_loss, lm_loss
from .metrics import MetricsLog

logger = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    lm_nll: float
    attn_ce: float
    total: float
    tokens: int
    supervised_tokens: int = 0
    wall_time_s: float = 0.0

    @property
    def ppl(self) -> float:
        return math.exp(self.lm_nll)


@dataclass
class EvalStats:
    nll: float
    attn_ce: float
    tokens: int
    supervised_tokens: int = 0

    @property
    def ppl(self) -> float:
        return math.exp(self.nll)


def _progress(windows: Sequence[Window], desc: str, enabled: bool):
    return tqdm(
        windows,
        desc=desc,
        leave=False,
        file=sys.stderr,
        disable=not (enabled and sys.stderr.isatty()),
    )


def _advance(state: Optional[CarriedState], window: Window) -> Optional[CarriedState]:
    if window.is_first or state is None:
        return None
    return state.detach()


# ----------------------------------------------------------------------
# Optimizer schedule
# ----------------------------------------------------------------------


def trainable_parameters(model: nn.Module) -> List[nn.Parameter]:
    return [parameter for parameter in model.parameters() if parameter.requires_grad]


def build_optimizer(model: nn.Module, config: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        trainable_parameters(model), lr=config.lr, weight_decay=config.weight_decay
    )


class OptimizerSchedule:
    """Adam first, then averaged SGD.

    The switch happens after epoch ``asgd_switch_epoch`` (``"epoch"``) or
    once validation loss has not improved for ``nonmono`` epochs
    (``"nonmono"``); ``"none"`` keeps Adam for the whole run.
    """

    def __init__(self, model: nn.Module, config: RunConfig) -> None:
        self.config = config
        self.parameters = trainable_parameters(model)
        self.optimizer: torch.optim.Optimizer = build_optimizer(model, config)
        self.switched_epoch: Optional[int] = None
        self._best_valid = math.inf
        self._stale = 0

    @property
    def kind(self) -> str:
        return "asgd" if isinstance(self.optimizer, torch.optim.ASGD) else "adam"

    def switch_to_asgd(self, epoch: int) -> None:
        self.optimizer = torch.optim.ASGD(
            self.parameters,
            lr=self.config.asgd_lr,
            t0=0,
            lambd=0.0,
            weight_decay=self.config.weight_decay,
        )
        self.switched_epoch = epoch
        logger.info("switching to averaged SGD after epoch %d", epoch)

    def end_epoch(self, epoch: int, valid_nll: float) -> bool:
        """Record a validation result; returns True when the optimizer switched."""

        if self.kind == "asgd" or self.config.optimizer_switch == "none":
            return False
        if self.config.optimizer_switch == "epoch":
            trigger = epoch >= self.config.asgd_switch_epoch
        else:
            if valid_nll < self._best_valid:
                self._best_valid = valid_nll
                self._stale = 0
            else:
                self._stale += 1
            trigger = self._stale >= self.config.nonmono
        if trigger:
            self.switch_to_asgd(epoch)
        return trigger

    @contextlib.contextmanager
    def averaged(self) -> Iterator[None]:
        """Temporarily swap the ASGD running averages into the parameters."""

        if self.kind != "asgd":
            yield
            return
        backup = []
        with torch.no_grad():
            for parameter in self.parameters:
                state = self.optimizer.state.get(parameter, {})
                if "ax" in state:
                    backup.append((parameter, parameter.detach().clone()))
                    parameter.copy_(state["ax"])
        try:
            yield
        finally:
            with torch.no_grad():
                for parameter, saved in backup:
                    parameter.copy_(saved)

    def state_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "optimizer": self.optimizer.state_dict(),
            "switched_epoch": self.switched_epoch,
            "best_valid": self._best_valid,
            "stale": self._stale,
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if state.get("kind") == "asgd" and self.kind != "asgd":
            self.switch_to_asgd(int(state.get("switched_epoch") or 0))
        self.optimizer.load_state_dict(state["optimizer"])
        self.switched_epoch = state.get("switched_epoch")
        self._best_valid = float(state.get("best_valid", math.inf))
        self._stale = int(state.get("stale", 0))


# ----------------------------------------------------------------------
# Epochs and evaluation
# ----------------------------------------------------------------------


def train_epoch(
    model: LanguageModel,
    windows: Sequence[Window],
    optimizer: torch.optim.Optimizer,
    *,
    clip: float,
    lam: float,
    epoch: int = 1,
    progress: bool = True,
) -> EpochStats:
    """One pass over ``windows``; the carried state is detached between windows."""

    model.train()
    started = time.perf_counter()
    parameters = trainable_parameters(model)
    state: Optional[CarriedState] = None
    nll_sum = ce_sum = total_sum = 0.0
    tokens = supervised_tokens = 0
    bar = _progress(windows, f"epoch {epoch}", progress)
    for window in bar:
        state = _advance(state, window)
        output = model(window.inputs, state)
        nll = lm_loss(output.logits, window.targets)
        breakdown = joint_loss(nll, output.record, window.oracle, window.supervised, lam)
        values = breakdown.as_floats()
        if not all(math.isfinite(value) for value in values.values()):
            raise TrainingDivergedError(epoch, window.index, values)

        optimizer.zero_grad()
        breakdown.total.backward()
        if clip > 0:
            nn.utils.clip_grad_norm_(parameters, clip)
        optimizer.step()
        state = output.state

        count = window.num_tokens
        tokens += count
        nll_sum += values["lm_nll"] * count
        total_sum += values["total"] * count
        supervised_tokens += breakdown.supervised_tokens
        ce_sum += values["attn_ce"] * breakdown.supervised_tokens
        bar.set_postfix(ppl=f"{math.exp(nll_sum / tokens):.2f}")

    if tokens == 0:
        raise ValueError("train_epoch needs at least one window")
    return EpochStats(
        epoch=epoch,
        lm_nll=nll_sum / tokens,
        attn_ce=ce_sum / supervised_tokens if supervised_tokens else 0.0,
        total=total_sum / tokens,
        tokens=tokens,
        supervised_tokens=supervised_tokens,
        wall_time_s=time.perf_counter() - started,
    )


@torch.no_grad()
def evaluate(model: LanguageModel, windows: Sequence[Window], *, lam: float = 0.0) -> EvalStats:
    model.eval()
    state: Optional[CarriedState] = None
    nll_sum = ce_sum = 0.0
    tokens = supervised_tokens = 0
    for window in windows:
        state = _advance(state, window)
        output = model(window.inputs, state)
        nll = lm_loss(output.logits, window.targets)
        breakdown = joint_loss(nll, output.record, window.oracle, window.supervised, lam)
        count = window.num_tokens
        nll_sum += float(nll) * count
        tokens += count
        supervised_tokens += breakdown.supervised_tokens
        ce_sum += float(breakdown.attn_ce) * breakdown.supervised_tokens
        state = output.state
    if tokens == 0:
        raise ValueError("evaluate needs at least one window")
    return EvalStats(
        nll=nll_sum / tokens,
        attn_ce=ce_sum / supervised_tokens if supervised_tokens else 0.0,
        tokens=tokens,
        supervised_tokens=supervised_tokens,
    )


def evaluate_ppl(model: LanguageModel, windows: Sequence[Window]) -> float:
    """``exp`` of the mean negative log-likelihood over every target token."""

    return evaluate(model, windows).ppl


@torch.no_grad()
def attention_agreement(model: LanguageModel, windows: Sequence[Window]) -> float:
    """Share of supervised tokens whose attention argmax lands on a gold span."""

    model.eval()
    state: Optional[CarriedState] = None
    hits = total = 0
    for window in windows:
        state = _advance(state, window)
        output = model(window.inputs, state)
        state = output.state
        if window.oracle is None or window.supervised is None:
            continue
        weights = output.record.weights
        oracle = window.oracle
        width = weights.shape[-1]
        if oracle.shape[-1] < width:
            oracle = torch.nn.functional.pad(oracle, (0, width - oracle.shape[-1]))
        best = weights.argmax(dim=-1, keepdim=True)
        gold = oracle[..., :width].gather(-1, best).squeeze(-1) > 0
        hits += int((gold & window.supervised).sum())
        total += int(window.supervised.sum())
    return hits / total if total else 0.0


# ----------------------------------------------------------------------
# Full runs
# ----------------------------------------------------------------------


@dataclass
class FitResult:
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_ppl: float = math.inf
    switched_epoch: Optional[int] = None
    checkpoint_path: Optional[str] = None

    def valid_ppls(self) -> List[float]:
        return [entry["ppl"] for entry in self.history if entry["split"] == "valid"]


class Trainer:
    """Runs epochs, tracks the best validation perplexity and saves that model."""

    def __init__(
        self,
        model: LanguageModel,
        config: RunConfig,
        vocab: Vocabulary,
        *,
        metrics: Optional[MetricsLog] = None,
        checkpoint_path: Optional[str | Path] = None,
        progress: bool = True,
    ) -> None:
        self.model = model
        self.config = config
        self.vocab = vocab
        self.metrics = metrics
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.progress = progress
        self.schedule = OptimizerSchedule(model, config)

    def _record(self, result: FitResult, entry: Dict[str, Any]) -> None:
        entry["ppl"] = math.exp(entry["nll"])
        result.history.append(entry)
        if self.metrics is not None:
            self.metrics.log(**entry)

    def fit(
        self,
        train_windows: Sequence[Window],
        valid_windows: Sequence[Window],
        *,
        epochs: Optional[int] = None,
    ) -> FitResult:
        lam = self.model.config.lam
        result = FitResult()
        for epoch in range(1, (epochs or self.config.epochs) + 1):
            stats = train_epoch(
                self.model,
                train_windows,
                self.schedule.optimizer,
                clip=self.config.clip,
                lam=lam,
                epoch=epoch,
                progress=self.progress,
            )
            self._record(
                result,
                {
                    "epoch": epoch,
                    "split": "train",
                    "nll": stats.lm_nll,
                    "attn_ce": stats.attn_ce,
                    "wall_time_s": stats.wall_time_s,
                },
            )
            started = time.perf_counter()
            with self.schedule.averaged():
                valid = evaluate(self.model, valid_windows, lam=lam)
                entry: Dict[str, Any] = {
                    "epoch": epoch,
                    "split": "valid",
                    "nll": valid.nll,
                    "attn_ce": valid.attn_ce,
                }
                if valid.supervised_tokens:
                    entry["agreement"] = attention_agreement(self.model, valid_windows)
                entry["wall_time_s"] = time.perf_counter() - started
                self._record(result, entry)
                if valid.ppl < result.best_valid_ppl:
                    result.best_valid_ppl = valid.ppl
                    result.best_epoch = epoch
                    if self.checkpoint_path is not None:
                        save_checkpoint(
                            self.checkpoint_path,
                            self.model,
                            config=self.config,
                            vocab=self.vocab,
                            epoch=epoch,
                            optimizer_state=self.schedule.state_dict(),
                        )
                        result.checkpoint_path = str(self.checkpoint_path)
            logger.info(
                "epoch %d: train ppl %.3f, valid ppl %.3f%s",
                epoch,
                stats.ppl,
                valid.ppl,
                f", attn_ce {stats.attn_ce:.4f}" if stats.supervised_tokens else "",
            )
            self.schedule.end_epoch(epoch, valid.nll)
        result.switched_epoch = self.schedule.switched_epoch
        return result


__all__ = [
    "EpochStats",
    "EvalStats",
    "trainable_parameters",
    "build_optimizer",
    "OptimizerSchedule",
    "train_epoch",
    "evaluate",
    "evaluate_ppl",
    "attention_agreement",
    "FitResult",
    "Trainer",
]
