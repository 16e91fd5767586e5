import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

REPORTED_ATTACKS = ("fgsm", "pgd", "bim", "deepfool", "cw")


def _attack_slots() -> Dict[str, Optional[float]]:
    return {name: None for name in REPORTED_ATTACKS}


class RunReport(BaseModel):
    """One JSON document per run. Every field is always written; values not computed stay null.

    Wall-clock figures live only in `timing`, so two runs of the same config
    and seed differ in that field alone.
    """

    command: str
    name: str
    seed: int
    config: Dict[str, Any]
    natural_acc: Optional[float] = None
    robust_acc: Dict[str, Optional[float]] = Field(default_factory=_attack_slots)
    attack_failures: Dict[str, Optional[int]] = Field(default_factory=_attack_slots)
    epoch_losses: Optional[List[float]] = None
    rounds: Optional[List[Dict[str, Any]]] = None
    sweep: Optional[List[Dict[str, Any]]] = None
    fit: Optional[Dict[str, Any]] = None
    regression: Optional[List[Dict[str, Any]]] = None
    partition: Optional[Dict[str, Any]] = None
    model_path: Optional[str] = None
    param_checksum: Optional[str] = None
    artifacts: List[str] = []
    timing: Dict[str, float] = {}

    def set_accuracies(self, natural: Optional[float], robust: Dict[str, Optional[float]], failures: Dict[str, int]):
        self.natural_acc = natural
        for name, value in robust.items():
            self.robust_acc[name] = value
        for name, value in failures.items():
            self.attack_failures[name] = value


def write_json(payload: Union[BaseModel, Dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True)
    path.write_text(text + "\n")
    logger.info("Wrote %s", path)
    return path


def append_jsonl(record: Union[BaseModel, Dict[str, Any]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    line = record.model_dump_json() if isinstance(record, BaseModel) else json.dumps(record, sort_keys=True)
    with path.open("a") as handle:
        handle.write(line + "\n")


def write_csv(rows: Union[pd.DataFrame, Sequence[Dict[str, Any]]], path: Path, columns: Optional[List[str]] = None) -> Path:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path
