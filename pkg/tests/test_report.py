import csv
import json

from fedcil.cil import CilReport, TaskResult
from fedcil.metrics import MetricsRow
from fedcil.report import CSV_COLUMNS, write_report


def sample_report():
    row = lambda acc: MetricsRow(acc, acc - 0.05, acc, acc, 0.02, 0.97, 0.96, 0.965)
    rep = CilReport({"seed": 1}, [["Benign", "A"], ["B"]], ["Benign", "A", "B"])
    rep.tasks = [
        TaskResult(0, "A", ["Benign", "A"], row(0.99), {"Benign": 1.0, "A": 0.98}),
        TaskResult(1, "B", ["Benign", "A", "B"], row(0.95),
                   {"Benign": 0.97, "A": 0.90, "B": 0.94}),
    ]
    rep.forgetting = {"A": {"raw": 0.08, "floored": 0.08}}
    return rep


def test_csv_columns_are_the_published_headers(tmp_path):
    assert CSV_COLUMNS == [
        "task_index", "Multiclass Acc.", "Macro Recall", "Weighted Recall",
        "Binary Acc.", "Binary FPR", "Binary Precision", "Binary Recall",
        "Binary F1-Score",
    ]
    paths = write_report(sample_report(), tmp_path, figures=False)
    with open(paths["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 3
    assert rows[1][0] == "0" and rows[2][0] == "1"
    assert float(rows[2][1]) == 0.95


def test_json_is_loadable_and_roundtrips(tmp_path):
    rep = sample_report()
    paths = write_report(rep, tmp_path, figures=False)
    with open(paths["json"]) as fh:
        back = CilReport.from_dict(json.load(fh))
    assert back.forgetting == rep.forgetting
    assert [t.introduced_class for t in back.tasks] == ["A", "B"]


def test_figures_written_alongside_csv(tmp_path):
    paths = write_report(sample_report(), tmp_path, figures=True)
    for key in ("fig_metrics", "fig_recall", "fig_forgetting"):
        assert key in paths
        with open(paths[key], "rb") as fh:
            assert fh.read(8).startswith(b"\x89PNG")
