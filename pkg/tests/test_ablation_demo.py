"""End-to-end check of the shipped profiles and ablation configs via the CLI."""

import shutil
from pathlib import Path

import pytest

from boxfusion.cli import EXIT_OK, main

REPO = Path(__file__).resolve().parents[1]

CONFIG_NAMES = ("model1_trio", "model2_diverse", "model3_sr", "model4_sahi")
PROFILE_NAMES = (
    "yolor",
    "yolor_1536",
    "yolor_1920",
    "yolov12s",
    "salience_detr",
    "co_detr",
    "yolor_sr",
    "co_detr_sahi",
)


@pytest.fixture(scope="module")
def demo_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    shutil.copytree(REPO / "configs", root / "configs")
    argv = ["simulate", "--out", str(root / "sim_data"), "--seed", "7", "--images", "6", "--objects", "30"]
    for name in PROFILE_NAMES:
        argv += ["--profile", str(REPO / "profiles" / f"{name}.json")]
    argv += ["--sliced", "co_detr_sahi"]
    assert main(argv) == EXIT_OK
    return root


@pytest.mark.parametrize("config", CONFIG_NAMES)
def test_shipped_config_runs(demo_workspace, config):
    run_dir = demo_workspace / "runs" / config
    code = main(["pipeline", "run", str(demo_workspace / "configs" / f"{config}.toml"), "--out", str(run_dir)])
    assert code == EXIT_OK
    assert (run_dir / "detections.json").is_file()
    assert (run_dir / "report.json").is_file()
    assert (run_dir / "manifest.json").is_file()


def test_shipped_configs_compare(demo_workspace, capsys):
    run_dirs = [str(demo_workspace / "runs" / name) for name in CONFIG_NAMES]
    assert main(["pipeline", "compare", *run_dirs]) == EXIT_OK
    table = capsys.readouterr().out
    assert all(name in table for name in CONFIG_NAMES)
    lines = [line for line in table.strip().splitlines() if line]
    assert len(lines) == 1 + len(CONFIG_NAMES)
