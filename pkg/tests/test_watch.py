import json
import os
import time

import numpy as np

from foldgate.cli import main
from foldgate.flagging import load_policy
from foldgate.volume import LabelVolume
from foldgate.watch import DONE, FAILED, LOG_NAME, PROCESSING, poll_once, watch

from conftest import write_case


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def drop_cases(inbox, block, n=3):
    shifted = LabelVolume(block.geometry, np.roll(block.voxels, 2))
    for i in range(n):
        folds = [block] * 4 + [shifted if i == 1 else block]
        write_case(inbox, f"case_{i}", folds)


def test_three_manifests_three_lines(tmp_path, block):
    inbox, out = tmp_path / "inbox", tmp_path / "out"
    out.mkdir()
    drop_cases(inbox, block)
    assert watch(inbox, out, load_policy("ct_tumor"), interval=0.01, max_polls=2) == 3
    lines = read_lines(out / LOG_NAME)
    assert [r["case_id"] for r in lines] == ["case_0", "case_1", "case_2"]
    assert [r["flagged"] for r in lines] == [False, True, False]
    assert lines[1]["decisions"][0]["name"] == "tumor"
    assert all("timestamp" in r for r in lines)
    assert not list(inbox.glob("*.manifest.json"))
    assert not list(inbox.glob("*" + PROCESSING))
    assert len(list(inbox.glob("*" + DONE))) == 3


def test_malformed_manifest_isolated(tmp_path, block):
    inbox, out = tmp_path / "inbox", tmp_path / "out"
    out.mkdir()
    drop_cases(inbox, block)
    (inbox / "broken.manifest.json").write_text("{ not json")
    assert poll_once(inbox, out / LOG_NAME, load_policy("ct_tumor")) == 4
    lines = read_lines(out / LOG_NAME)
    errors = [r for r in lines if "error" in r]
    assert len(errors) == 1
    assert errors[0]["manifest"] == "broken.manifest.json"
    assert errors[0]["case_id"] is None
    assert sorted(r["case_id"] for r in lines if "error" not in r) == ["case_0", "case_1", "case_2"]
    assert (inbox / ("broken.manifest.json" + FAILED)).exists()


def test_rerun_adds_nothing(tmp_path, block):
    inbox, log = tmp_path / "inbox", tmp_path / LOG_NAME
    drop_cases(inbox, block)
    spec = load_policy("ct_tumor")
    assert poll_once(inbox, log, spec) == 3
    assert poll_once(inbox, log, spec) == 0
    assert len(read_lines(log)) == 3


def test_stale_claim_reclaimed(tmp_path, block):
    inbox, log = tmp_path / "inbox", tmp_path / LOG_NAME
    drop_cases(inbox, block, n=1)
    src = inbox / "case_0.manifest.json"
    claimed = inbox / ("case_0.manifest.json" + PROCESSING)
    os.rename(src, claimed)
    spec = load_policy("ct_tumor")
    # a fresh claim belongs to a live worker
    assert poll_once(inbox, log, spec, stale_after=60) == 0
    old = time.time() - 120
    os.utime(claimed, (old, old))
    assert poll_once(inbox, log, spec, stale_after=60) == 1
    assert read_lines(log)[0]["case_id"] == "case_0"


def test_parallel_workers_preserve_claim_order(tmp_path, block):
    inbox, log = tmp_path / "inbox", tmp_path / LOG_NAME
    drop_cases(inbox, block, n=6)
    assert poll_once(inbox, log, load_policy("ct_tumor"), jobs=3) == 6
    assert [r["case_id"] for r in read_lines(log)] == [f"case_{i}" for i in range(6)]


def test_cli_watch(tmp_path, block):
    inbox, out = tmp_path / "inbox", tmp_path / "out"
    out.mkdir()
    drop_cases(inbox, block, n=2)
    args = ["watch", "--inbox", str(inbox), "--out", str(out), "--interval", "0.01", "--max-polls", "1"]
    assert main(args) == 0
    assert len(read_lines(out / LOG_NAME)) == 2
    assert main(["watch", "--inbox", str(tmp_path / "none"), "--out", str(out), "--max-polls", "1"]) == 2
