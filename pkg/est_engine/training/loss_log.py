from __future__ import annotations

from pathlib import Path
from typing import Iterator, NamedTuple

import pandas as pd

COLUMNS = ("step", "stage", "loss", "lr", "cum_flops")


class LossRecord(NamedTuple):
    step: int
    stage: int
    loss: float
    lr: float
    cum_flops: float


class LossLog:
    """
    Append-only training record, one row per step. Steps strictly
    increase and cumulative FLOPs never decrease.
    """

    def __init__(self, records: list[LossRecord] | None = None):
        self._records: list[LossRecord] = []
        for record in records or []:
            self.append(*record)

    def append(
        self, step: int, stage: int, loss: float, lr: float, cum_flops: float
    ) -> None:
        """
        Add the record of one step.

        Raises:
            ValueError: If the step does not follow the last one or the
                FLOPs total goes down.
        """
        if self._records:
            last = self._records[-1]
            if step <= last.step:
                raise ValueError(f"step {step} does not follow step {last.step}")
            if cum_flops < last.cum_flops:
                raise ValueError(
                    f"cumulative FLOPs decreased from {last.cum_flops} to {cum_flops}"
                )
        self._records.append(
            LossRecord(int(step), int(stage), float(loss), float(lr), float(cum_flops))
        )

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[LossRecord]:
        return iter(self._records)

    def __getitem__(self, index: int) -> LossRecord:
        return self._records[index]

    @property
    def records(self) -> list[LossRecord]:
        return list(self._records)

    @property
    def last(self) -> LossRecord | None:
        return self._records[-1] if self._records else None

    def truncated(self, step: int) -> LossLog:
        """The records up to and including `step`."""
        return LossLog([r for r in self._records if r.step <= step])

    def stage_end_steps(self) -> list[int]:
        """Last logged step of every stage except the final one."""
        return [
            current.step
            for current, following in zip(self._records, self._records[1:])
            if following.stage != current.stage
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._records, columns=list(COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> LossLog:
        """
        Raises:
            ValueError: If a column is missing or the rows break the log's
                ordering rules.
        """
        missing = [c for c in COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"loss log is missing columns {missing}")
        rows = frame[list(COLUMNS)].itertuples(index=False)
        return cls([LossRecord(*row) for row in rows])

    def to_csv_text(self) -> str:
        return self.to_frame().to_csv(index=False, lineterminator="\n")

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | Path) -> LossLog:
        """
        Raises:
            FileNotFoundError: If the file does not exist.
            ValueError: If it is not a valid loss log.
        """
        frame = pd.read_csv(path, float_precision="round_trip")
        return cls.from_frame(frame)
