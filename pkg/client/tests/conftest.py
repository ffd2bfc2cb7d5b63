import json
import subprocess
import sys

import pytest

SERVER_CONFIG = {
    "render": {"width": 64, "height": 64, "v_fov_deg": 60.0},
    "procedural": {"n_points": 2000, "n_boxes": 2},
    # distractors are irrelevant for interactive episodes; skip them to keep
    # dataset generation fast
    "pipeline": {"k_distractors": 0},
}


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """A generated dataset plus the config file both sides share."""
    root = tmp_path_factory.mktemp("client-ws")
    config = root / "config.json"
    config.write_text(json.dumps(SERVER_CONFIG))
    data = root / "data"
    proc = subprocess.run(
        [sys.executable, "-m", "viewplan.cli", "gen-data",
         "--proc-scenes", "12", "--pairs-per-scene", "5", "--seed", "21",
         "--out", str(data), "--config", str(config)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    return {"root": root, "config": str(config), "manifest": str(data / "manifest.jsonl")}
