from textual.app import ComposeResult
from textual.containers import Horizontal, Vertical
from textual.screen import Screen
from textual.widgets import Footer, Header, Label, TabbedContent, TabPane

from ..record import CalibrationRecord
from .widgets import PairTable, RecordDetails, RecordTreeWidget, StageList


class DashboardScreen(Screen):
    def __init__(self, stages, title: str = ""):
        super().__init__()
        self.stages = list(stages)
        self.run_title = title

    def compose(self) -> ComposeResult:
        yield Header()
        with TabbedContent(initial="tab-schedule"):
            with TabPane("Schedule", id="tab-schedule"):
                yield Horizontal(
                    Vertical(
                        StageList(self.stages, id="stages"),
                        Label(self.run_title, id="status-line"),
                        classes="left-pane",
                    ),
                    Vertical(
                        PairTable(id="pairs"),
                        classes="right-pane",
                    ),
                )
            with TabPane("Record", id="tab-record"):
                yield Horizontal(
                    Vertical(RecordTreeWidget(id="record-tree-widget"), classes="left-pane"),
                    Vertical(RecordDetails(id="record-details"), classes="right-pane"),
                )
        yield Footer()

    def update_stage(self, name: str, state: str):
        try:
            self.query_one("#stages", StageList).set_state(name, state)
        except Exception:
            pass

    def update_record(self, record: CalibrationRecord):
        try:
            self.query_one("#pairs", PairTable).record = record
            self.query_one("#record-tree-widget", RecordTreeWidget).record = record
        except Exception:
            pass

    def set_status(self, text: str):
        try:
            self.query_one("#status-line", Label).update(text)
        except Exception:
            pass

    def on_record_tree_widget_selected(self, message: RecordTreeWidget.Selected):
        self.query_one("#record-details", RecordDetails).entry = (message.path, message.value)
