import json

import pytest

from palm_align.harness import ExperimentReport
from palm_align.imaging import read_png
from palm_align.plotting import rows_to_csv, write_report


def test_csv_union_of_columns():
    text = rows_to_csv([{"a": 1, "b": 0.1 + 0.2}, {"a": 2, "c": True, "d": None}])
    assert text.splitlines() == ["a,b,c,d", "1,0.3,,", "2,,true,"]


RETRIEVAL = ExperimentReport("retrieval", 0, {}, summary={"ood_mean": 0.5}, rows=[
    {"variant": "raw", "in-domain": 0.1, "workspace": 0.2, "viewpoint": 0.3},
    {"variant": "aligned", "in-domain": 0.05, "workspace": 0.1, "viewpoint": None},
])

CROP = ExperimentReport("crop-size", 0, {}, rows=[
    {"kappa": k, "in-domain": 0.01 * k / 80, "ood_mean": 0.02} for k in (80, 120, 160)
])

INVARIANCE = ExperimentReport("invariance", 0, {}, rows=[
    {"family": "workspace", "raw_discrepancy": 0.1, "aligned_discrepancy": 0.2, "aligned_no_overlay_discrepancy": 0.3},
    {"family": "conjugate", "raw_discrepancy": 0.1, "aligned_discrepancy": 0.0, "aligned_no_overlay_discrepancy": 0.0},
])


@pytest.mark.parametrize("rep", [RETRIEVAL, CROP, INVARIANCE], ids=lambda r: r.name)
def test_report_files_are_deterministic(tmp_path, rep):
    a = write_report(rep, tmp_path / "a")
    b = write_report(rep, tmp_path / "b")
    assert [p.name for p in a] == ["report.json", f"{rep.name}.csv", f"{rep.name}.png"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert json.loads(a[0].read_text())["rows"] == rep.rows
    assert read_png(a[2]).ndim == 3


def test_no_figure(tmp_path):
    paths = write_report(RETRIEVAL, tmp_path, figure=False)
    assert not (tmp_path / "retrieval.png").exists() and len(paths) == 2
