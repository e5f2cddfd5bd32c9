import pytest

from swapmark import config, experiment as ex, toy_clip as tc

# acceptance outcomes collected for the terminal summary: number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def default_config(tmp_path_factory):
    out = tmp_path_factory.mktemp("default-run")
    return config.load(overrides={"run.output_dir": str(out)})


@pytest.fixture(scope="session")
def default_record(default_config):
    """One full default scenario shared by every test that needs trained prompts."""
    record = ex.run_experiment(default_config)
    assert record.ok, f"{record.failed_stage}: {record.error}"
    return record


@pytest.fixture(scope="session")
def bwap_record(tmp_path_factory):
    """The default scenario embedding the backdoor watermark instead, with no attacks."""
    out = tmp_path_factory.mktemp("bwap-run")
    cfg = config.load(overrides={"run.output_dir": str(out), "run.mode": "bwap", "attacks.run": ""})
    record = ex.run_experiment(cfg)
    assert record.ok, f"{record.failed_stage}: {record.error}"
    return record


@pytest.fixture(scope="session")
def run_dir(default_config, default_record):
    from pathlib import Path
    return Path(default_config.run.output_dir)


@pytest.fixture(scope="session")
def trained(run_dir):
    """(model, {name: prompts}) loaded back from the default run's checkpoints."""
    prompts = {}
    model = None
    for name in ("watermarked", "baseline", "independent"):
        model, prompts[name] = tc.load_checkpoint(run_dir / "checkpoints" / f"{name}.ckpt")
    return model, prompts


@pytest.fixture(scope="session")
def scenario(default_config, trained):
    return ex.build_scenario(default_config, trained[0])


@pytest.fixture(scope="session")
def small_model():
    """A narrow backbone for tests that only need a working model quickly."""
    import numpy as np
    cfg = tc.ModelConfig(input_dim=8, feature_dim=16, hidden_dims=(32, 32), token_dim=8, ground_steps=50)
    means = np.random.default_rng(0).standard_normal((6, 8))
    return tc.build_model(cfg, means), means


@pytest.fixture(scope="session")
def bench_dir(tmp_path_factory):
    """A ``swapmark bench`` run with sweeps and the two curve attacks, driven through the CLI."""
    from swapmark.cli import main
    out = tmp_path_factory.mktemp("bench")
    assert main(["bench", "--out", str(out), "--set", "attacks.run=finetune, prune"]) == 0
    return out


@pytest.fixture(scope="session")
def bench_record(bench_dir):
    return ex.ResultRecord.load(bench_dir / "record.json")
