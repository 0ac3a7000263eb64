import logging
import threading
from pathlib import Path
from typing import List

from textual.app import App
from textual.binding import Binding

from ..backend import StreamBackend
from ..config import ArtifactConfig
from ..errors import MsGateError
from ..pipeline import run_schedule, schedule_for
from ..record import CalibrationRecord
from ..utils import write_dict_rows
from .screens import DashboardScreen

logger = logging.getLogger(__name__)


class ScheduleWorker(threading.Thread):
    """Runs the calibration schedule off the UI thread, reporting through callbacks."""

    def __init__(self, backend, config: ArtifactConfig, out: Path, on_stage, on_record, on_finish, resume=False):
        super().__init__(daemon=True)
        self.backend = backend
        self.config = config
        self.out = Path(out)
        self.checkpoint = self.out / "checkpoint.json"
        self.on_stage = on_stage
        self.on_record = on_record
        self.on_finish = on_finish
        self.resume = resume

    def sink(self, name: str, rows: List[dict]) -> None:
        write_dict_rows(self.out / f"{name}.csv", rows)

    def stage(self, name: str, state: str) -> None:
        self.on_stage(name, state)
        # the checkpoint is written before a stage reports done
        if state in ("done", "failed") and self.checkpoint.exists():
            try:
                self.on_record(CalibrationRecord.load(self.checkpoint))
            except MsGateError as exc:
                logger.warning("cannot reload checkpoint: %s", exc)

    def run(self):
        try:
            record = run_schedule(self.backend, self.config, checkpoint=self.checkpoint, resume=self.resume,
                                  sink=self.sink, on_stage=self.stage)
            record.save(self.out / "record.json")
            self.on_record(record)
            self.on_finish(f"calibration complete: {self.out / 'record.json'}")
        except MsGateError as exc:
            logger.error("schedule stopped: %s", exc)
            self.on_finish(f"stopped: {exc}")
        except Exception as e:
            logger.exception("schedule worker error")
            self.on_finish(f"worker error: {e}")


class CalibrationDashboardApp(App):
    CSS = """
    .left-pane {
        width: 40%;
        height: 100%;
        border-right: solid green;
    }
    .right-pane {
        width: 60%;
        height: 100%;
    }
    StageList {
        height: 1fr;
        padding: 1;
    }
    #status-line {
        height: auto;
        border-top: solid blue;
        padding: 0 1;
    }
    PairTable {
        height: 1fr;
    }
    RecordTreeWidget {
        height: 100%;
    }
    RecordDetails {
        height: 100%;
    }
    .header {
        text-align: center;
        background: $accent;
        color: $text;
        width: 100%;
    }
    """

    BINDINGS = [
        Binding("r", "resume", "Resume"),
        Binding("q", "quit", "Quit"),
    ]

    def __init__(self, config: ArtifactConfig, backend, out: Path):
        super().__init__()
        self.config = config
        self.backend = backend
        self.out = Path(out)
        self.worker = None

    def on_mount(self):
        self.title = "msgate calibration"
        self.sub_title = str(self.out)
        self.push_screen(DashboardScreen(schedule_for(self.config.pipeline), f"output: {self.out}"))
        self.start_worker(resume=False)

    def on_unmount(self):
        if isinstance(self.backend, StreamBackend):
            self.backend.close()

    def start_worker(self, resume: bool):
        self.worker = ScheduleWorker(
            self.backend, self.config, self.out,
            on_stage=lambda name, state: self.call_from_thread(self._update_stage, name, state),
            on_record=lambda record: self.call_from_thread(self._update_record, record),
            on_finish=lambda text: self.call_from_thread(self._finish, text),
            resume=resume,
        )
        self.worker.start()

    def action_resume(self):
        """Restart from the checkpoint after a failed stage."""
        if self.worker is not None and self.worker.is_alive():
            self.notify("schedule is still running")
            return
        self.start_worker(resume=True)

    def _update_stage(self, name: str, state: str):
        if isinstance(self.screen, DashboardScreen):
            self.screen.update_stage(name, state)

    def _update_record(self, record: CalibrationRecord):
        if isinstance(self.screen, DashboardScreen):
            self.screen.update_record(record)

    def _finish(self, text: str):
        if isinstance(self.screen, DashboardScreen):
            self.screen.set_status(text)
        self.notify(text)
