"""Per-run metrics log: one JSON object per line."""

from __future__ import annotations

import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional

import plotly.graph_objects as go


class MetricsLog:
    """Append-only JSONL log of per-epoch losses for one training run."""

    def __init__(self, log_path: str) -> None:
        self.log_path = str(log_path)
        directory = os.path.dirname(self.log_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

    def reset(self) -> None:
        with open(self.log_path, "w", encoding="utf-8"):
            pass

    def log(
        self,
        epoch: int,
        split: str,
        nll: float,
        attn_ce: float = 0.0,
        wall_time_s: float = 0.0,
        ppl: Optional[float] = None,
        **extra: Any,
    ) -> Dict[str, Any]:
        entry: Dict[str, Any] = {
            "epoch": int(epoch),
            "split": split,
            "nll": float(nll),
            "ppl": float(ppl) if ppl is not None else math.exp(float(nll)),
            "attn_ce": float(attn_ce),
            "wall_time_s": float(wall_time_s),
        }
        entry.update({key: float(value) for key, value in extra.items()})
        with open(self.log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry) + "\n")
        return entry

    def entries(self, split: Optional[str] = None) -> List[Dict[str, Any]]:
        if not os.path.exists(self.log_path):
            return []
        with open(self.log_path, "r", encoding="utf-8") as handle:
            records = [json.loads(line) for line in handle if line.strip()]
        if split is not None:
            records = [record for record in records if record["split"] == split]
        return records

    def summarize(self) -> Dict[str, float | int]:
        records = self.entries()
        if not records:
            return {}
        summary: Dict[str, float | int] = {
            "count": len(records),
            "epochs": max(int(record["epoch"]) for record in records),
        }
        valid = [record for record in records if record["split"] == "valid"]
        if valid:
            best = min(valid, key=lambda record: record["ppl"])
            summary["best_valid_ppl"] = best["ppl"]
            summary["best_epoch"] = best["epoch"]
        train = [record for record in records if record["split"] == "train"]
        if train:
            summary["last_train_ppl"] = train[-1]["ppl"]
        return summary

    def has_history(self) -> bool:
        return os.path.exists(self.log_path)

    def tail(self, limit: int = 50) -> Iterable[Dict[str, Any]]:
        return self.entries()[-limit:]

    def figure(self) -> go.Figure:
        """Perplexity per epoch, one line per split."""

        figure = go.Figure()
        records = self.entries()
        for split in sorted({record["split"] for record in records}):
            points = [record for record in records if record["split"] == split]
            figure.add_trace(
                go.Scatter(
                    x=[record["epoch"] for record in points],
                    y=[record["ppl"] for record in points],
                    mode="lines+markers",
                    name=split,
                )
            )
        figure.update_layout(title="Perplexity", xaxis_title="Epoch", yaxis_title="ppl")
        return figure


__all__ = ["MetricsLog"]
