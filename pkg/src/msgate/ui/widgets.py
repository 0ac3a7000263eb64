import math
import time

from textual.app import ComposeResult
from textual.message import Message
from textual.reactive import reactive
from textual.widgets import DataTable, Input, Label, ProgressBar, Static, Tree

from ..record import CalibrationRecord
from ..utils import humanize_hz

STATE_STYLE = {
    "pending": "[dim]pending[/]",
    "running": "[yellow]running[/]",
    "done": "[green]done[/]",
    "skipped": "[cyan]skipped[/]",
    "failed": "[bold red]failed[/]",
}


class StageList(Static):
    """Schedule progress: one row per stage plus an overall bar."""

    def __init__(self, stages, **kwargs):
        super().__init__(**kwargs)
        self.stages = list(stages)
        self.states = {name: "pending" for name in self.stages}
        self.started = {}
        self.elapsed = {}

    def compose(self) -> ComposeResult:
        yield Label("Schedule", classes="header")
        yield ProgressBar(total=len(self.stages), show_eta=False, id="schedule-bar")
        yield DataTable(id="stage-table")

    def on_mount(self):
        table = self.query_one(DataTable)
        table.add_columns("Stage", "State", "Elapsed")
        self.rebuild()

    def set_state(self, name: str, state: str):
        if state == "running":
            self.started[name] = time.monotonic()
        elif name in self.started:
            self.elapsed[name] = time.monotonic() - self.started.pop(name)
        self.states[name] = state
        self.rebuild()

    def rebuild(self):
        table = self.query_one(DataTable)
        table.clear()
        for name in self.stages:
            elapsed = self.elapsed.get(name)
            table.add_row(name, STATE_STYLE.get(self.states[name], self.states[name]),
                          "" if elapsed is None else f"{elapsed:.1f} s")
        finished = sum(1 for s in self.states.values() if s in ("done", "skipped"))
        self.query_one("#schedule-bar", ProgressBar).progress = finished


class PairTable(Static):
    record = reactive(None)

    def compose(self) -> ComposeResult:
        yield Label("Gate pairs", classes="header")
        yield DataTable(id="pair-table")

    def on_mount(self):
        table = self.query_one(DataTable)
        table.add_columns("Pair", "Manifold", "Modes", "Detuning", "Kappa", "Anchors", "Fidelity")

    def watch_record(self, record: CalibrationRecord):
        table = self.query_one(DataTable)
        table.clear()
        if record is None:
            return
        for key, entry in sorted(record.pairs.items()):
            anchors = " ".join(f"{m}:{math.degrees(v):.1f}" for m, v in sorted(entry.anchors.items()))
            fidelity = record.diagnostics.get(f"fidelity:{key}", {}).get("report", "")
            table.add_row(
                key,
                entry.manifold,
                f"{entry.mode_lower}/{entry.mode_upper}",
                humanize_hz(entry.detuning / (2 * math.pi)),
                "-" if entry.kappa is None else f"{entry.kappa:.4f}",
                anchors or "-",
                fidelity,
            )


class RecordTreeWidget(Static):
    record = reactive(None)
    search_query = reactive("")

    class Selected(Message):
        def __init__(self, path: str, value, tree_id: str):
            self.path = path
            self.value = value
            self.tree_id = tree_id
            super().__init__()

    def compose(self) -> ComposeResult:
        yield Input(placeholder="Filter keys...", id="record-search")
        yield Tree("record", id="record-tree")

    def on_input_changed(self, event: Input.Changed):
        self.search_query = event.value
        self.rebuild_tree()

    def watch_record(self, record: CalibrationRecord):
        self.rebuild_tree()

    def rebuild_tree(self):
        tree = self.query_one(Tree)
        tree.clear()
        tree.root.expand()
        if self.record is None:
            return
        for key, value in self.record.to_dict().items():
            self._add_node(tree.root, key, key, value)

    def _add_node(self, parent_node, label: str, path: str, value):
        if not self.matches(path, value):
            return
        if isinstance(value, dict):
            node = parent_node.add(label, data=(path, value))
            if self.search_query:
                node.expand()
            for key, child in value.items():
                self._add_node(node, str(key), f"{path}.{key}", child)
        else:
            parent_node.add_leaf(f"{label} [dim]{_short(value)}[/]", data=(path, value))

    def matches(self, path: str, value) -> bool:
        query = self.search_query.lower()
        if not query or query in path.lower():
            return True
        if isinstance(value, dict):
            return any(self.matches(f"{path}.{k}", v) for k, v in value.items())
        return False

    def on_tree_node_selected(self, event: Tree.NodeSelected):
        if event.node.data:
            path, value = event.node.data
            self.post_message(self.Selected(path, value, self.id))


class RecordDetails(Static):
    entry = reactive(None)

    def compose(self) -> ComposeResult:
        yield Label("Details", classes="header")
        yield DataTable(id="details-table")

    def on_mount(self):
        self.query_one(DataTable).add_columns("Key", "Value")

    def watch_entry(self, entry):
        table = self.query_one(DataTable)
        table.clear()
        if entry is None:
            return
        path, value = entry
        if isinstance(value, dict):
            table.add_rows((str(k), _short(v)) for k, v in value.items())
        else:
            table.add_row(path, _short(value))


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict):
        return f"{{{len(value)} keys}}"
    if isinstance(value, list):
        text = ", ".join(_short(v) for v in value[:6])
        return f"[{text}{', ...' if len(value) > 6 else ''}]"
    return str(value)
