"""CLI subcommands: profile, pareto, train, verify, plus failure modes."""

import json

import pytest

from trainmem import profiler
from trainmem.cli import main


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_profile_wrn_baseline(tmp_path, capsys):
    cfg = tmp_path / "base.cfg"
    cfg.write_text("precision = fp32\nminibatch = 100\nmicrobatch = 100\n")
    code, out, _ = run_cli(["profile", "--arch", "wrn-28-2", "--config", str(cfg),
                            "--out", str(tmp_path / "rep")], capsys)
    assert code == 0
    payload = json.loads((tmp_path / "rep.json").read_text())
    assert abs(payload["total_mb"] / 404.8 - 1) < 0.10
    csv_text = (tmp_path / "rep.csv").read_text()
    assert csv_text.startswith("arch,")


def test_profile_dct_baseline(tmp_path, capsys):
    cfg = tmp_path / "dct.cfg"
    cfg.write_text(
        "precision = fp32\nminibatch = 4000\nmicrobatch = 4000\n"
        "optimizer = adam\nbatch_unit = tokens\n"
    )
    code, out, _ = run_cli(["profile", "--arch", "dc-transformer-iwslt",
                            "--config", str(cfg)], capsys)
    assert code == 0
    payload = json.loads(out)
    assert abs(payload["total_mb"] / 2896 - 1) < 0.12


def test_profile_param_free_arch_reports_zero_model(tmp_path, capsys):
    arch = tmp_path / "tiny.arch"
    arch.write_text(
        "x = input(shape=4d)\ny = input(shape=scalar, dtype=int)\n"
        "loss_n = softmax_xent(classes=4) <- x, y\nloss loss_n\n"
    )
    cfg = tmp_path / "c.cfg"
    cfg.write_text("minibatch = 1\nmicrobatch = 1\n")
    code, out, _ = run_cli(["profile", "--arch", str(arch), "--config", str(cfg)], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["model_bytes"] == 0
    assert payload["optimizer_bytes"] == 0
    assert payload["recompute_flops"] == 0


def test_profile_bad_arch_nonzero_exit(tmp_path, capsys):
    arch = tmp_path / "bad.arch"
    arch.write_text("x = input(shape=4d\nloss x\n")
    code, _, err = run_cli(["profile", "--arch", str(arch)], capsys)
    assert code == 2
    assert "error" in err


def test_missing_preset_descriptive(capsys):
    code, _, err = run_cli(["profile", "--arch", "wrn-9999"], capsys)
    assert code == 2
    assert "wrn-9999" in err or "No such file" in err


def test_pareto_reproduces_table_rows(tmp_path, capsys):
    sweep_file = tmp_path / "sweep.cfg"
    sweep_file.write_text(
        "arch = wrn-28-2\nminibatch = 100\n"
        "densities = 1.0, 0.3, 0.2, 0.1\nprecisions = fp16\n"
        "microbatches = 100, 10, 4\nstrategies = residual_star:2\n"
    )
    out_file = tmp_path / "frontier.csv"
    code, _, _ = run_cli(["pareto", "--sweep", str(sweep_file), "--out", str(out_file)], capsys)
    assert code == 0
    rows = out_file.read_text().strip().splitlines()
    header = rows[0].split(",")
    mb_col = header.index("total_mb")
    totals = sorted(float(r.split(",")[mb_col]) for r in rows[1:])
    for target in (42.6, 12.2, 6.7, 5.6, 3.6, 2.5):
        assert any(abs(t / target - 1) < 0.10 for t in totals), target
    # deterministic byte-identical rerun
    out2 = tmp_path / "frontier2.csv"
    run_cli(["pareto", "--sweep", str(sweep_file), "--out", str(out2)], capsys)
    assert out_file.read_bytes() == out2.read_bytes()


def test_train_and_determinism_across_strategies(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps = 45\nminibatch = 16\nlr = 0.05\nlog_every = 15\n")
    outputs = []
    for st, name in (("none", "a"), ("residual_star:1", "b")):
        cfg.write_text(
            f"steps = 45\nminibatch = 16\nlr = 0.05\nlog_every = 15\nstrategy = {st}\n"
        )
        code, out, _ = run_cli(["train", "--arch", "desk-cnn", "--config", str(cfg),
                                "--out", str(tmp_path / name), "--seed", "5"], capsys)
        assert code == 0
        outputs.append((tmp_path / f"{name}.metrics.jsonl").read_bytes())
    assert outputs[0] == outputs[1]  # checkpointing leaves training untouched


def test_train_dsr_logs_constant_nnz(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps = 60\nminibatch = 16\ndensity = 0.5\nrewire_every = 20\n")
    code, out, _ = run_cli(["train", "--arch", "desk-cnn", "--config", str(cfg),
                            "--out", str(tmp_path / "dsr"), "--seed", "3"], capsys)
    assert code == 0
    lines = (tmp_path / "dsr.rewire.jsonl").read_text().strip().splitlines()
    budgets = {sum(json.loads(l)["per_tensor_nnz"].values()) for l in lines}
    assert len(budgets) == 1


def test_verify_fails_under_csr_formula_mutation(monkeypatch, capsys):
    # deliberate fault injection: corrupting the CSR byte formula must trip
    # the golden-total checks
    from trainmem import verification

    original = profiler.csr_storage_bytes_from_counts

    def corrupted(rows, cols, nnz, element_bytes, shares_indices=False):
        return original(rows, cols, nnz, element_bytes, shares_indices) + 64 * nnz

    monkeypatch.setattr(profiler, "csr_storage_bytes_from_counts", corrupted)
    with pytest.raises(AssertionError):
        verification.check_01_wrn_golden_totals()
