"""Polling inbox monitor.

Manifests dropped into the inbox are claimed by renaming ``X.manifest.json``
to ``X.manifest.json.processing``, flagged, logged as one JSONL line, and
renamed to ``.done`` (or ``.failed``). Claims older than ``stale_after``
seconds are assumed to belong to a crashed worker and are put back.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from ._atomic import round_floats
from .errors import FoldgateError
from .manifest import MANIFEST_SUFFIX, load_case, load_manifest
from .pipeline import analyze_case

log = logging.getLogger(__name__)

PROCESSING = ".processing"
DONE = ".done"
FAILED = ".failed"
LOG_NAME = "decisions.jsonl"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def reclaim_stale(inbox: Path, stale_after: float) -> list[Path]:
    restored = []
    cutoff = time.time() - stale_after
    for p in sorted(inbox.glob("*" + MANIFEST_SUFFIX + PROCESSING)):
        try:
            if p.stat().st_mtime > cutoff:
                continue
            target = p.with_name(p.name[: -len(PROCESSING)])
            os.rename(p, target)
        except FileNotFoundError:
            continue
        log.warning("reclaimed stale claim %s", p.name)
        restored.append(target)
    return restored


def claim(inbox: Path) -> list[Path]:
    claimed = []
    for p in sorted(inbox.glob("*" + MANIFEST_SUFFIX)):
        target = p.with_name(p.name + PROCESSING)
        try:
            os.rename(p, target)
        except FileNotFoundError:
            # another consumer won the race
            continue
        os.utime(target)
        claimed.append(target)
    return claimed


def _process(path: Path, spec) -> dict:
    original = path.name[: -len(PROCESSING)]
    record = {"manifest": original}
    try:
        manifest = load_manifest(path)
        record["case_id"] = manifest.case_id
        analysis = analyze_case(load_case(manifest), spec)
    except (FoldgateError, OSError, ValueError) as e:
        record["error"] = f"{type(e).__name__}: {e}"
        return record
    record["flagged"] = analysis.decision.case_flagged
    record["decisions"] = [
        dict(entry.to_dict(), name=analysis.label_map.get(entry.label, str(entry.label)))
        for entry in analysis.decision.labels
    ]
    return record


def poll_once(inbox, log_path, spec, stale_after: float = 300.0, jobs: int = 1) -> int:
    """One scan of the inbox; returns the number of JSONL lines appended."""
    inbox = Path(inbox)
    reclaim_stale(inbox, stale_after)
    claimed = claim(inbox)
    if not claimed:
        return 0
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda p: _process(p, spec), claimed))
    else:
        results = [_process(p, spec) for p in claimed]

    with open(log_path, "a", encoding="utf-8") as out:
        for path, rec in zip(claimed, results):
            line = {"timestamp": _now(), "case_id": rec.get("case_id")}
            line.update((k, v) for k, v in rec.items() if k != "case_id")
            out.write(json.dumps(round_floats(line), ensure_ascii=False) + "\n")
            out.flush()
            os.fsync(out.fileno())
            done = path.with_name(path.name[: -len(PROCESSING)] + (FAILED if "error" in rec else DONE))
            os.replace(path, done)
            if "error" in rec:
                log.error("%s: %s", rec["manifest"], rec["error"])
            else:
                log.info("%s flagged=%s", rec.get("case_id"), rec["flagged"])
    return len(claimed)


def watch(inbox, out_dir, spec, interval: float = 5.0, stale_after: float = 300.0,
          jobs: int = 1, max_polls: int = 0) -> int:
    """Poll until interrupted (or ``max_polls`` scans, when positive). Returns lines written."""
    log_path = Path(out_dir) / LOG_NAME
    total = polls = 0
    while True:
        total += poll_once(inbox, log_path, spec, stale_after, jobs)
        polls += 1
        if max_polls and polls >= max_polls:
            return total
        time.sleep(interval)
