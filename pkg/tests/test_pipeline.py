import csv
import hashlib
import dataclasses
import json
import shutil

import numpy as np
import pytest

from gridseries import cli
from gridseries.errors import ValidationError
from gridseries.grid_model import load_regional_history, load_snapshot, write_regional_history, write_snapshot
from gridseries.pipeline import RunConfig, StageError, run_pipeline, stage_restore


@pytest.fixture(scope="module")
def first_run(desk_dir):
    cfg = RunConfig.load(desk_dir / "config.json", out=str(desk_dir / "run_a"))
    return cfg, run_pipeline(cfg)


def test_manifest_complete(first_run):
    cfg, m = first_run
    assert m["status"] == "complete"
    assert list(m["stages"]) == ["geo", "bids", "sample", "disagg", "restore", "validate"]
    assert m["stages"]["restore"]["summary"]["periods"] == 288
    assert m["seed"] == 7
    assert set(m["inputs"]) == {"snapshot", "history", "registry", "offers"}
    with open(f"{cfg.out}/restoration_report.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 288
    on_disk = json.loads(open(f"{cfg.out}/manifest.json").read())
    assert on_disk["outputs"] == m["outputs"]


def test_rerun_is_byte_identical(first_run, desk_dir):
    _, m = first_run
    cfg = RunConfig.load(desk_dir / "config.json", out=str(desk_dir / "run_b"))
    assert run_pipeline(cfg)["outputs"] == m["outputs"]


def test_stage_subcommands_compose(first_run, desk_dir):
    _, m = first_run
    out = desk_dir / "stages"
    for stage in ("geo", "bids", "sample", "disagg", "restore", "validate"):
        assert cli.main([stage, "--config", str(desk_dir / "config.json"), "--out", str(out)]) == 0
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest, name


def test_granularity_rejected_before_any_stage(desk_dir, capsys):
    out = desk_dir / "g7"
    code = cli.main(["run", "--config", str(desk_dir / "config.json"), "--out", str(out), "--granularity", "7"])
    assert code == 2
    assert "does not divide" in capsys.readouterr().err
    assert not out.exists()
    with pytest.raises(ValidationError):
        RunConfig.load(desk_dir / "config.json", granularity=7, source_minutes=30)


def test_restore_on_given_components(first_run, desk_dir):
    cfg, _ = first_run
    out = desk_dir / "restore_only"
    out.mkdir()
    code = cli.main(["restore", "--config", str(desk_dir / "config.json"), "--out", str(out),
                     "--components", f"{cfg.out}/components.csv"])
    assert code == 0
    assert (out / "restored.csv").read_bytes() == open(f"{cfg.out}/restored.csv", "rb").read()
    assert (out / "restoration_report.csv").exists()


def test_validate_two_csvs(desk_dir, tmp_path, capsys):
    hist = load_regional_history(desk_dir / "regional_history.csv")["load"]
    noisy = dataclasses.replace(hist, values=hist.values * 1.01)
    syn = tmp_path / "syn.csv"
    write_regional_history([noisy], syn)
    code = cli.main(["validate", "--historical", str(desk_dir / "regional_history.csv"),
                     "--synthetic", str(syn), "--out", str(tmp_path / "v")])
    assert code == 0
    report = json.loads((tmp_path / "v" / "validation_report.json").read_text())
    assert 0 <= report["overlap_score"] <= 1
    assert (tmp_path / "v" / "projection.csv").exists()


def test_sample_dump_panel(first_run, desk_dir):
    out = desk_dir / "dump"
    shutil.copytree(first_run[0].out, out)
    assert cli.main(["sample", "--config", str(desk_dir / "config.json"), "--out", str(out), "--dump-panel"]) == 0
    with open(out / "panel_load.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) == {"component_id", "period", "multiplier"}
    assert len(rows) == 100 * 49


def test_infeasible_exit_code(desk_case, desk_dir, tmp_path, capsys):
    for name in ("regional_history.csv", "geo_registry.csv", "offers.csv", "config.json"):
        shutil.copy(desk_dir / name, tmp_path / name)
    s = load_snapshot(desk_dir / "snapshot.json")
    weak = tuple(dataclasses.replace(g, p_max_MW=0.2 * g.p_max_MW) for g in s.generators)
    write_snapshot(dataclasses.replace(s, generators=weak), tmp_path / "snapshot.json")
    assert cli.main(["run", "--config", str(tmp_path / "config.json")]) == 3
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["status"] == "incomplete" and manifest["failed_stage"] == "restore"
    assert "period 0" in capsys.readouterr().err


def test_stage_error_names_stage(desk_dir, tmp_path):
    for name in ("snapshot.json", "geo_registry.csv", "regional_history.csv", "config.json"):
        shutil.copy(desk_dir / name, tmp_path / name)
    text = (desk_dir / "offers.csv").read_text().replace("price_usd_per_mw", "price", 1)
    (tmp_path / "offers.csv").write_text(text)
    cfg = RunConfig.load(tmp_path / "config.json")
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "bids"
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert list(manifest["stages"]) == ["geo"] and manifest["failed_stage"] == "bids"


def test_config_checks(desk_dir, tmp_path):
    with pytest.raises(ValidationError, match="unknown config keys"):
        RunConfig.from_mapping({"snapshot": "a", "history": "b", "registry": "c", "offers": "d", "bogus": 1})
    with pytest.raises(ValidationError, match="seed"):
        RunConfig.load(desk_dir / "config.json", seed=2 ** 64)
    cfg = RunConfig.load(desk_dir / "config.json")
    cfg = dataclasses.replace(cfg, offers=str(tmp_path / "missing.csv"))
    with pytest.raises(ValidationError, match="not found"):
        cfg.check_paths()
    assert cli.main(["geo"]) == 2


def test_parallel_restore_matches_serial(first_run, desk_dir):
    cfg, m = first_run
    par = dataclasses.replace(cfg, out=str(desk_dir / "par"), parallelism=2)
    shutil.copytree(cfg.out, par.out)
    stage_restore(par)
    assert open(f"{par.out}/restored.csv", "rb").read() == open(f"{cfg.out}/restored.csv", "rb").read()
    assert np.isclose(m["stages"]["restore"]["summary"]["periods"], 288)
