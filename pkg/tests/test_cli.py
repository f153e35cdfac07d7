import subprocess
import sys

import pytest

from drci import cli
from drci.boxes import BBox
from drci.data import generate_benchmark, write_benchmark
from drci.tracker import TrackResult

TINY = """\
steps = 2
batch_pairs = 2
n_sequences = 3
seq_length = 4
log_timing = false
net.template_size = 32
net.search_size = 64
net.channels = 4, 6, 8
net.embed_dim = 16
gen.frame_size = 96
gen.target_min = 12.0
gen.target_max = 24.0
bench.n_sequences = 2
bench.length = 4
bench.gen.frame_size = 96
bench.gen.target_min = 12.0
bench.gen.target_max = 24.0
"""


@pytest.fixture()
def tiny(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(TINY)
    return path


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    for word in ("gen-data", "train", "track", "eval", "sweep-rho", "gradcheck", "net.embed_dim = 128"):
        assert word in out


def test_subcommand_help(capsys):
    assert cli.main(["eval", "--help"]) == 0
    assert "--results" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["track", "--data", "x"], ["sweep-rho", "--rho", "a,b"], ["--seed", "x", "train"]],
)
def test_usage_errors_exit_two(argv, capsys):
    assert cli.main(argv) == 2


def test_missing_out_is_a_failure(capsys):
    assert cli.main(["train"]) == 1
    assert "needs --out" in capsys.readouterr().err


def test_bad_config_is_a_failure(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("steps = 1\nwhatever = 2\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "bad.txt:2: unknown key 'whatever'" in capsys.readouterr().err


def test_sweep_without_baseline_fails(tiny, tmp_path, capsys):
    assert cli.main(["sweep-rho", "--config", str(tiny), "--rho", "0.1,0.2", "--out", str(tmp_path)]) == 1
    assert "0.0" in capsys.readouterr().err


def test_eval_perfect_fixture(tmp_path, capsys):
    seqs = generate_benchmark(2, 3, seed=4)
    write_benchmark(tmp_path / "data", seqs)
    for k, seq in enumerate(seqs):
        TrackResult(list(seq.gt_boxes), [2.0] * len(seq)).write_csv(tmp_path / "res" / f"seq_{k:04d}.csv")
    argv = ["eval", "--data", str(tmp_path / "data"), "--results", str(tmp_path / "res"), "--out", str(tmp_path / "m")]
    assert cli.main(argv) == 0
    out = capsys.readouterr().out
    assert "precision20=1.0" in out
    assert "auc=0.9523809523809523" in out
    assert "fps=500.0" in out
    assert (tmp_path / "m" / "metrics.txt").exists()


def test_eval_missing_results(tmp_path, capsys):
    write_benchmark(tmp_path / "data", generate_benchmark(1, 2, seed=4))
    (tmp_path / "res").mkdir()
    assert cli.main(["eval", "--data", str(tmp_path / "data"), "--results", str(tmp_path / "res")]) == 1
    assert "seq_0000" in capsys.readouterr().err


def test_eval_short_results(tmp_path, capsys):
    write_benchmark(tmp_path / "data", generate_benchmark(1, 3, seed=4))
    TrackResult([BBox(0, 0, 5, 5)], [1.0]).write_csv(tmp_path / "res" / "seq_0000.csv")
    assert cli.main(["eval", "--data", str(tmp_path / "data"), "--results", str(tmp_path / "res")]) == 1
    assert "sequence seq_0000: 1 predictions for 3 frames" in capsys.readouterr().err


def test_full_pipeline(tiny, tmp_path, capsys):
    data, run, res = tmp_path / "data", tmp_path / "run", tmp_path / "res"
    assert cli.main(["gen-data", "--config", str(tiny), "--out", str(data), "--seed", "3"]) == 0
    assert len(list(data.iterdir())) == 2
    # global flags may also precede the subcommand
    assert cli.main(["--config", str(tiny), "--out", str(run), "train"]) == 0
    assert {p.name for p in run.iterdir()} == {"config.txt", "model.ckpt", "train_log.csv"}
    assert "steps = 2" in (run / "config.txt").read_text()
    assert cli.main(["track", "--config", str(tiny), "--checkpoint", str(run / "model.ckpt"),
                     "--data", str(data), "--out", str(res)]) == 0
    assert sorted(p.name for p in res.iterdir()) == ["seq_0000.csv", "seq_0001.csv"]
    capsys.readouterr()
    assert cli.main(["eval", "--data", str(data), "--results", str(res)]) == 0
    assert "precision20=" in capsys.readouterr().out


def test_train_log_is_byte_reproducible(tiny, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(tiny), "--out", str(tmp_path / name)]) == 0
    for f in ("train_log.csv", "model.ckpt", "config.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_cli(tiny, tmp_path, capsys):
    assert cli.main(["sweep-rho", "--config", str(tiny), "--rho", "0.0,0.5", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "rho,precision20,auc,final_l_drl,final_l_crq"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.0", "0.5"]


def test_console_module_entry():
    proc = subprocess.run([sys.executable, "-m", "drci.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep-rho" in proc.stdout
