import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from stylefuse.cli import main

# a few training steps per stage: exercises every code path in seconds
TINY = """
corpus.samples_per_cell = 5
corpus.judge_samples_per_cell = 2
vae.stage1_steps = 10
vae.stage2_steps = 10
diffusion.content_steps = 10
diffusion.style_steps = 10
classifier.steps = 20
classifier.latent_steps = 10
align.epochs = 2
sample.steps = 5
eval.samples_per_cell = 1
eval.gamma_grid = 0,0.6
"""

STAGES = ("gen-data", "train-vae", "train-style-encoder", "train-classifier", "train-diffusion",
          "train-align")


def invoke(run_dir, *args):
    return CliRunner().invoke(main, ["--run-dir", str(run_dir), *args], catch_exceptions=False)


def train_tiny(root: Path) -> Path:
    cfg = root.parent / f"{root.name}.txt"
    cfg.write_text(TINY)
    res = invoke(root, "--config", str(cfg), "gen-data")
    assert res.exit_code == 0, res.output
    for stage in STAGES[1:]:
        res = invoke(root, stage)
        assert res.exit_code == 0, res.output
    return root


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    return train_tiny(tmp_path_factory.mktemp("tiny") / "run")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for num in range(1, 11):
        if num in mod.RESULTS:
            title, ok, detail = mod.RESULTS[num]
            terminalreporter.write_line(f"ACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}: "
                                        f"{title}: {detail}")
        else:
            terminalreporter.write_line(f"ACCEPTANCE {num:2d} NOT RUN")
