import json
import subprocess
import sys

from saesense.cli import main


def run(toy_assets, tmp_path, *args):
    return main([args[0], "--config", str(toy_assets), "--out", str(tmp_path / "out"), *args[1:]])


def test_collect(toy_assets, tmp_path, capsys):
    assert run(toy_assets, tmp_path, "collect", "--set", "n_moment_samples=200") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["sample_count"] == 200
    for name in ("gaussian_mean.npy", "gaussian_factor.npy", "sparsity.bin", "sparsity.bin.json",
                 "activations.safetensors", "prompts.txt"):
        assert (tmp_path / "out" / name).exists()


def test_report_latents(toy_assets, tmp_path, capsys):
    assert run(toy_assets, tmp_path, "report-latents", "--set", "n_latent_report=50") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["sample_count"] == 50
    assert "histograms" in json.loads((tmp_path / "out" / "latents.json").read_text())


def test_sensitivity_then_analyze(toy_assets, tmp_path, capsys):
    assert run(toy_assets, tmp_path, "sensitivity", "--set", "n_perturbations=3") == 0
    out = capsys.readouterr().out
    assert "[ms]" in out and "synthetic_structured" in out
    before = (tmp_path / "out" / "results_ms.csv").read_text()
    (tmp_path / "out" / "results_ms.csv").unlink()
    assert run(toy_assets, tmp_path, "analyze") == 0
    assert (tmp_path / "out" / "results_ms.csv").read_text() == before


def test_plateau(toy_assets, tmp_path):
    assert run(toy_assets, tmp_path, "plateau", "--set", "n_perturbations=2", "--workers", "2") == 0
    cfg = json.loads((tmp_path / "out" / "config.json").read_text())
    assert cfg["kind"] == "plateau" and cfg["n_perturbations"] == 2


def test_exit_codes(toy_assets, tmp_path, capsys):
    assert run(toy_assets, tmp_path, "sensitivity", "--set", "bogus=1") == 2
    assert run(toy_assets, tmp_path, "sensitivity", "--set", "target_types=nope") == 2
    assert run(toy_assets, tmp_path, "sensitivity", "--set", "model_path=/nonexistent") == 3
    bad_tokens = tmp_path / "tokens.txt"
    bad_tokens.write_text("1 2 999\n" * 3)
    assert run(toy_assets, tmp_path, "sensitivity", "--set", f"tokens_path='{bad_tokens}'",
               "--set", "seq_len=3", "--set", "n_perturbations=1") == 4
    assert run(toy_assets, tmp_path, "analyze", "--curves", str(tmp_path / "none.csv")) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "data error" in err


def test_module_entry_point(toy_assets, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "saesense", "sensitivity", "-c", str(toy_assets),
                           "--out", str(tmp_path / "o"), "--set", "n_perturbations=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
