import json
import re
import subprocess
import sys

import pytest

from fedqot import cli, qot
from fedqot.nn import deserialize_params, evaluate_accuracy

SMALL = ["--n-samples", "1500", "--seed", "3"]
TRAIN = ["--hidden", "16", "--eta", "0.1", "--local-epochs", "1", "--batch-size", "32", "--rounds", "3"]


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys is not None else None
    return code, out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["gen-data", *SMALL, "--out", str(out)]) == 0
    return out


def report(path):
    lines = (path / "report.csv").read_text().splitlines()
    assert lines[0] == "scenario,accuracy"
    return {name: float(acc) for name, acc in (ln.split(",") for ln in lines[1:])}


def test_gen_data_files(data_dir):
    names = sorted(p.name for p in data_dir.iterdir())
    assert names == ["domain_0.csv", "domain_1.csv", "domain_2.csv", "schema.json", "stats.json", "test.csv",
                     "train_0.csv", "train_1.csv", "train_2.csv"]
    schema = qot.FeatureSchema.from_dict(json.loads((data_dir / "schema.json").read_text()))
    assert schema == qot.default_schema(3)
    domains = [qot.load_csv(data_dir / f"domain_{k}.csv") for k in range(3)]
    assert [len(d) for d in domains] == [500, 500, 500]
    train = sum(len(qot.load_csv(data_dir / f"train_{k}.csv")) for k in range(3))
    assert train + len(qot.load_csv(data_dir / "test.csv")) == 1500


def test_gen_data_full_scale_sizes(tmp_path, capsys):
    code, out = run(["gen-data", "--n-samples", "35216", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "11739, 11739, 11738" in out.out
    sizes = [len((tmp_path / f"domain_{k}.csv").read_text().splitlines()) - 1 for k in range(3)]
    assert sizes == [11739, 11739, 11738]


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", *SMALL, "--out", str(tmp_path / name)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_simulate_single_round_without_training_is_a_tie(tmp_path, capsys):
    code, _ = run(["simulate", *SMALL, *TRAIN, "--rounds", "1", "--local-epochs", "0",
                   "--out", str(tmp_path)], capsys)
    assert code == 0
    acc = report(tmp_path)
    assert acc["centralized"] == acc["distributed"]
    assert "PASS" in (tmp_path / "report.txt").read_text()


def test_simulate_outputs_and_determinism(tmp_path, capsys):
    for name in ("a", "b"):
        argv = ["simulate", *SMALL, *TRAIN, "--parity-tolerance", "100", "--out", str(tmp_path / name)]
        assert run(argv, capsys)[0] == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for f in ("report.csv", "history.csv", "model_distributed.bin", "model_centralized.bin"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    ta, tb = (p.joinpath("report.txt").read_text().splitlines() for p in (a, b))
    assert ta[0].startswith("# fedqot simulate report, generated ")
    assert ta[1:] == tb[1:]
    history = (a / "history.csv").read_text().splitlines()
    assert len(history) == 1 + 3
    assert float(history[-1].split(",")[2]) == report(a)["distributed"]


def test_simulate_from_data_dir_matches_in_memory(tmp_path, data_dir, capsys):
    run(["simulate", *SMALL, *TRAIN, "--out", str(tmp_path / "mem")], capsys)
    run(["simulate", *SMALL, *TRAIN, "--data-dir", str(data_dir), "--out", str(tmp_path / "dir")], capsys)
    assert report(tmp_path / "mem") == report(tmp_path / "dir")


def test_parity_failure_exit_code(tmp_path, capsys):
    code, out = run(["simulate", *SMALL, *TRAIN, "--parity-tolerance", "0", "--out", str(tmp_path)], capsys)
    acc = report(tmp_path)
    assert acc["centralized"] != acc["distributed"]
    assert code == cli.EXIT_PARITY
    assert "FAIL" in out.out


def test_evaluate_matches_library(tmp_path, data_dir, capsys):
    run(["simulate", *SMALL, *TRAIN, "--data-dir", str(data_dir), "--out", str(tmp_path)], capsys)
    model = tmp_path / "model_distributed.bin"
    code, out = run(["evaluate", "--model", str(model), "--data", str(data_dir / "test.csv"),
                     "--stats", str(data_dir / "stats.json")], capsys)
    assert code == 0
    stats = qot.load_stats(data_dir / "stats.json")
    test, _ = qot.encode_and_normalize(qot.load_csv(data_dir / "test.csv"), qot.default_schema(), stats)
    expected = evaluate_accuracy(deserialize_params(model.read_bytes()), test)
    assert out.out.strip() == f"accuracy {expected:.6f}"
    assert expected == report(tmp_path)["distributed"]


def test_centralized_command(tmp_path, capsys):
    run(["simulate", *SMALL, *TRAIN, "--out", str(tmp_path / "sim")], capsys)
    code, out = run(["centralized", *SMALL, *TRAIN, "--out", str(tmp_path / "cen")], capsys)
    assert code == 0
    assert out.out.strip() == f"centralized accuracy {report(tmp_path / 'sim')['centralized']:.6f}"
    assert (tmp_path / "cen/model_centralized.bin").read_bytes() == \
        (tmp_path / "sim/model_centralized.bin").read_bytes()


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = {"n_samples": 1500, "seed": 3, "hidden_dims": [16], "eta": 0.1, "local_epochs": 1,
           "batch_size": 32, "rounds": 5}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    run(["simulate", "--config", str(path), "--rounds", "3", "--out", str(tmp_path / "c")], capsys)
    run(["simulate", *SMALL, *TRAIN, "--out", str(tmp_path / "f")], capsys)
    assert (tmp_path / "c/report.csv").read_bytes() == (tmp_path / "f/report.csv").read_bytes()
    assert "'rounds': 3" in (tmp_path / "c/report.txt").read_text()


@pytest.mark.parametrize("argv", [
    [],
    ["nonsense"],
    ["simulate", "--rounds", "abc"],
    ["simulate", "--hidden", "3,x"],
])
def test_argparse_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == cli.EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["simulate", "--rounds", "0"],
    ["simulate", "--batch-size", "0"],
    ["simulate", "--test-fraction", "1.5"],
    ["evaluate", "--data", "x.csv"],
    ["ecn", "--data", "x.csv"],
    ["tcn"],
    ["tcn", "--data-dir", ".", "--tls-cert", "c.pem"],
])
def test_semantic_usage_errors(argv, capsys):
    code, out = run(argv, capsys)
    assert code == cli.EXIT_USAGE
    assert "usage error" in out.err


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{"rounds": 2, "colour": "blue"}')
    code, out = run(["simulate", "--config", str(path)], capsys)
    assert code == cli.EXIT_USAGE and "colour" in out.err
    path.write_text("[1, 2]")
    assert run(["simulate", "--config", str(path)], capsys)[0] == cli.EXIT_USAGE
    assert run(["simulate", "--config", str(tmp_path / "missing.json")], capsys)[0] == cli.EXIT_USAGE


def test_bad_input_csv_is_runtime_error(tmp_path, data_dir, capsys):
    run(["simulate", *SMALL, *TRAIN, "--rounds", "1", "--out", str(tmp_path)], capsys)
    bad = tmp_path / "bad.csv"
    bad.write_text("n_spans,launch_power_dbm,channel_load,modulation,domain_id,label\n3,9.0,12,QPSK,0,1\n")
    code, out = run(["evaluate", "--model", str(tmp_path / "model_distributed.bin"), "--data", str(bad)], capsys)
    assert code == cli.EXIT_RUNTIME
    assert "row 1" in out.err and "launch_power_dbm" in out.err


def test_corrupt_model_is_runtime_error(tmp_path, data_dir, capsys):
    model = tmp_path / "m.bin"
    model.write_bytes(b"FAVG\x01\x01\x00\x00garbage")
    code, _ = run(["evaluate", "--model", str(model), "--data", str(data_dir / "test.csv")], capsys)
    assert code == cli.EXIT_RUNTIME


def _spawn(*args):
    return subprocess.Popen([sys.executable, "-m", "fedqot", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True)


def test_tcn_and_ecn_processes_match_simulate(tmp_path, data_dir, capsys):
    run(["simulate", *SMALL, *TRAIN, "--data-dir", str(data_dir), "--out", str(tmp_path / "sim")], capsys)
    tcn = _spawn("tcn", *SMALL, *TRAIN, "--data-dir", str(data_dir), "--listen", "127.0.0.1:0",
                 "--out", str(tmp_path / "tcn"))
    try:
        banner = tcn.stdout.readline()
        port = re.search(r"listening on [\d.]+:(\d+)", banner).group(1)
        ecns = [_spawn("ecn", "--endpoint", f"127.0.0.1:{port}", "--data", str(data_dir / f"train_{k}.csv"),
                       "--ecn-id", f"ecn-{k}", "--data-dir", str(data_dir)) for k in range(3)]
        for p in ecns:
            out, err = p.communicate(timeout=120)
            assert p.returncode == 0, err
            assert "done after 3 rounds" in out
        out, err = tcn.communicate(timeout=120)
    finally:
        tcn.kill()
    assert tcn.returncode == 0, err
    expected = report(tmp_path / "sim")["distributed"]
    assert f"distributed accuracy {expected:.6f}" in out
    assert (tmp_path / "tcn/model_tcn.bin").read_bytes() == (tmp_path / "sim/model_distributed.bin").read_bytes()


def test_ecn_rejected_exit_code(tmp_path, data_dir):
    tcn = _spawn("tcn", *SMALL, *TRAIN, "--data-dir", str(data_dir), "--listen", "127.0.0.1:0",
                 "--min-samples", "100000", "--expected-ecns", "1", "--out", str(tmp_path))
    try:
        port = re.search(r":(\d+),", tcn.stdout.readline()).group(1)
        ecn = _spawn("ecn", "--endpoint", f"127.0.0.1:{port}", "--data", str(data_dir / "train_0.csv"),
                     "--ecn-id", "e")
        _, err = ecn.communicate(timeout=60)
        assert ecn.returncode == cli.EXIT_REJECTED
        assert "below minimum" in err
    finally:
        tcn.kill()
        tcn.communicate()


def test_ecn_without_tcn_is_runtime_error(data_dir, capsys):
    code, out = run(["ecn", "--endpoint", "127.0.0.1:1", "--data", str(data_dir / "train_0.csv"),
                     "--ecn-id", "e"], capsys)
    assert code == cli.EXIT_RUNTIME
    assert "connect failed" in out.err


def test_divergence_is_runtime_error(tmp_path, capsys):
    code, out = run(["simulate", *SMALL, *TRAIN, "--eta", "1e300", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_RUNTIME
    assert "non-finite loss" in out.err
