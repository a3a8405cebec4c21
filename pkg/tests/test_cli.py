"""Config parsing, presets, verbs, output files, and atomic writes."""

import json
import os

import numpy as np
import pytest

from alda.cli import (
    CONFIG_DOC,
    CliError,
    atomic_write_text,
    build_parser,
    config_as_text,
    main,
    parse_config,
)
from alda.harness import RECORD_HEADER, RunConfig
import dataclasses


def _tiny_overrides(**extra):
    base = dict(
        n_per_domain=120,
        total_steps=12,
        batch=24,
        probe_every=6,
        mmd_probe_n=32,
    )
    base.update(extra)
    return [f"{k}={v}" for k, v in base.items()]


class TestParseConfig:
    def test_defaults_carry_schedule_constants(self):
        cfg = parse_config(None, ["method=alda"])
        assert cfg.delta == 0.9
        assert cfg.eta0 == 0.01
        assert cfg.sched_alpha == 10.0
        assert cfg.sched_beta == 0.75
        assert cfg.momentum == 0.9

    def test_digits_preset_sets_digit_threshold(self, tmp_path):
        cfg = parse_config(None, ["preset=mnist-usps-subset"])
        assert cfg.delta == 0.6
        assert cfg.optimizer == "adam"
        assert cfg.eta0 == pytest.approx(1e-3)

    def test_override_beats_preset(self):
        cfg = parse_config(None, ["preset=mnist-usps-subset", "delta=0.8"])
        assert cfg.delta == 0.8

    def test_file_then_override_order(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment line\nmethod = st\ndelta = 0.7\n\n")
        cfg = parse_config(path, ["delta=0.55"])
        assert cfg.method == "st"
        assert cfg.delta == 0.55

    def test_unknown_key_named(self):
        with pytest.raises(CliError, match="foo"):
            parse_config(None, ["foo=1"])

    def test_type_mismatch_named(self):
        with pytest.raises(CliError, match="total_steps"):
            parse_config(None, ["total_steps=soon"])

    def test_unknown_preset_rejected(self):
        with pytest.raises(CliError, match="preset"):
            parse_config(None, ["preset=imagenet"])

    def test_bool_parsing(self):
        assert parse_config(None, ["soft_pseudo=true"]).soft_pseudo is True
        assert parse_config(None, ["soft_pseudo=0"]).soft_pseudo is False
        with pytest.raises(CliError, match="soft_pseudo"):
            parse_config(None, ["soft_pseudo=maybe"])

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just words\n")
        with pytest.raises(CliError, match="key = value"):
            parse_config(path, [])

    def test_invalid_value_surfaces_validation_message(self):
        with pytest.raises(CliError, match="delta"):
            parse_config(None, ["delta=1.5"])

    def test_config_round_trip_through_text(self, tmp_path):
        cfg = parse_config(None, ["method=dann", "delta=0.8"])
        path = tmp_path / "echo.cfg"
        path.write_text(config_as_text(cfg))
        again = parse_config(path, [])
        assert again == cfg


class TestHelp:
    def test_help_lists_every_config_key_with_default(self):
        text = build_parser().format_help()
        defaults = RunConfig()
        for f in dataclasses.fields(RunConfig):
            assert f.name in text
            assert f.name in CONFIG_DOC
        assert repr(defaults.delta) in text
        assert "preset" in text


class TestVerbs:
    def test_train_writes_outputs_and_is_deterministic(self, tmp_path):
        args = ["train", "--out", str(tmp_path / "a")]
        for ov in _tiny_overrides(method="source_only"):
            args += ["--set", ov]
        assert main(args) == 0
        rec_a = (tmp_path / "a" / "record.csv").read_text()
        assert rec_a.splitlines()[0] == RECORD_HEADER
        final = json.loads((tmp_path / "a" / "final.json").read_text())
        assert final["config"]["method"] == "source_only"
        assert 0.0 <= final["final"]["tgt_acc"] <= 1.0

        args[2] = str(tmp_path / "b")
        assert main(args) == 0
        assert rec_a == (tmp_path / "b" / "record.csv").read_text()

    def test_train_diverged_exits_nonzero_but_writes_record(self, tmp_path, capsys):
        args = ["train", "--out", str(tmp_path / "d")]
        for ov in _tiny_overrides(method="source_only", eta0=1e9, probe_every=1):
            args += ["--set", ov]
        assert main(args) == 1
        assert (tmp_path / "d" / "record.csv").exists()
        assert "diverged" in capsys.readouterr().err

    def test_ablate_writes_table_in_method_order(self, tmp_path):
        args = ["ablate", "--methods", "st,source_only", "--seeds", "1,2", "--out", str(tmp_path)]
        for ov in _tiny_overrides():
            args += ["--set", ov]
        assert main(args) == 0
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0] == "method,mean_acc,std_acc,seeds"
        assert lines[1].startswith("st,")
        assert lines[2].startswith("source_only,")

    def test_ablate_unknown_method_fails(self, tmp_path, capsys):
        args = ["ablate", "--methods", "nope", "--seeds", "1", "--out", str(tmp_path)]
        assert main(args) == 1
        assert "nope" in capsys.readouterr().err

    def test_gen_data_writes_both_domains(self, tmp_path):
        args = ["gen-data", "--out", str(tmp_path)]
        for ov in _tiny_overrides():
            args += ["--set", ov]
        assert main(args) == 0
        src = (tmp_path / "source.csv").read_text().splitlines()
        tgt = (tmp_path / "target.csv").read_text().splitlines()
        assert src[0] == "x0,x1,label,domain"
        assert len(src) == len(tgt) == 121
        assert tgt[1].endswith(",target")

    def test_export_features_row_counts(self, tmp_path):
        args = ["export-features", "--out", str(tmp_path)]
        for ov in _tiny_overrides(method="source_only", total_steps=6):
            args += ["--set", ov]
        assert main(args) == 0
        assert len((tmp_path / "features_source.csv").read_text().splitlines()) == 121
        assert len((tmp_path / "features_target.csv").read_text().splitlines()) == 121

    def test_grad_check_passes_on_pristine_build(self, capsys):
        assert main(["grad-check", "--trials", "2"]) == 0
        out = capsys.readouterr().out
        assert "grad-check: PASS" in out
        assert "op:grl" in out


class TestAtomicWrites:
    def test_write_then_rename(self, tmp_path):
        path = tmp_path / "deep" / "out.csv"
        atomic_write_text(path, "hello\n")
        assert path.read_text() == "hello\n"
        leftovers = [p for p in (tmp_path / "deep").iterdir() if p.name != "out.csv"]
        assert leftovers == []

    def test_no_temp_residue_after_cli_run(self, tmp_path):
        args = ["train", "--out", str(tmp_path)]
        for ov in _tiny_overrides(method="source_only", total_steps=6):
            args += ["--set", ov]
        assert main(args) == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"record.csv", "final.json", "config.txt"}
