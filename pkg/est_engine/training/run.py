from __future__ import annotations

from pathlib import Path

from pydantic import BaseModel, ConfigDict

from est_engine.config_file import dump_config


class RunManifest(BaseModel):
    """
    Layout of a run directory. Every run directory holds the config it
    was started from, so it can be re-run.
    """

    model_config = ConfigDict(frozen=True)

    root: Path
    """The run directory."""

    @property
    def config_path(self) -> Path:
        return self.root / "config.txt"

    @property
    def loss_log_path(self) -> Path:
        return self.root / "loss_log.csv"

    @property
    def eval_log_path(self) -> Path:
        return self.root / "eval_log.csv"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def diagnostics_dir(self) -> Path:
        return self.root / "diagnostics"

    @property
    def summary_path(self) -> Path:
        return self.root / "summary.txt"

    @property
    def log_path(self) -> Path:
        """Timestamped log records of the run."""
        return self.root / "train.log"

    def checkpoint_path(self, step: int) -> Path:
        return self.checkpoints_dir / f"step-{step:08d}"

    def latest_checkpoint(self) -> Path | None:
        """The checkpoint with the highest step, if any."""
        if not self.checkpoints_dir.is_dir():
            return None
        found = sorted(
            p for p in self.checkpoints_dir.glob("step-*") if (p / "manifest").is_file()
        )
        return found[-1] if found else None

    def create(self) -> RunManifest:
        for directory in (self.root, self.checkpoints_dir, self.diagnostics_dir):
            directory.mkdir(parents=True, exist_ok=True)
        return self


class RunSummary(BaseModel):
    """Headline numbers of a finished run."""

    model_config = ConfigDict(frozen=True)

    config_hash: str
    steps: int
    final_train_loss: float
    final_eval_loss: float | None = None
    total_flops: float
    """Measured FLOPs of the whole run."""
    baseline_flops: float
    """FLOPs of training the complete model for the same steps."""

    @property
    def savings_fraction(self) -> float:
        return 1.0 - self.total_flops / self.baseline_flops

    def to_text(self) -> str:
        values = self.model_dump(exclude_none=True)
        values["savings"] = f"{100 * self.savings_fraction:.1f}%"
        return dump_config(values)
