import json

import pytest

from sandshaper.cli import main


@pytest.fixture(scope="session")
def bench_artifacts(tmp_path_factory) -> dict:
    """Run the default CLI benchmark once per session; several tests and the
    acceptance suite read from it."""
    out_dir = tmp_path_factory.mktemp("bench")
    report_path = out_dir / "report.json"
    code = main(["bench", "--out", str(report_path)])
    report = json.loads(report_path.read_text())
    return {"exit_code": code, "dir": out_dir, "report_path": report_path,
            "report": report}
