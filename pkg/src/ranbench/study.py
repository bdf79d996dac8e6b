"""Durable append-only store of optimization studies and their trials.

One JSON record per line, flushed and fsynced per append, so a crash between
appends never loses completed records; a truncated final line is dropped on
load. Single writer per file, any number of readers.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

STORE_FORMAT_VERSION = 1


class StudyError(Exception):
    pass


@dataclass
class TrialRecord:
    study: str
    trial_id: int | None
    params: dict
    score: float
    state: str = "complete"  # "complete" | "failed"
    wall_time_s: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.state not in ("complete", "failed"):
            raise ValueError(f"bad trial state {self.state!r}")
        # non-finite scores are never stored as completed results
        if not math.isfinite(self.score):
            self.state = "failed"

    def equivalent(self, other: "TrialRecord") -> bool:
        """Field equality with NaN-tolerant score comparison."""
        scores_match = (self.score == other.score
                        or (math.isnan(self.score) and math.isnan(other.score)))
        return (self.study == other.study and self.trial_id == other.trial_id
                and self.params == other.params and scores_match
                and self.state == other.state
                and self.wall_time_s == other.wall_time_s
                and self.seed == other.seed)


class StudyStore:
    """Record log shared by the offline optimizer, RL evaluation and the
    hyperparameter search. Studies must be registered before appending."""

    def __init__(self, path):
        self.path = Path(path)
        self._studies: dict[str, list[str] | None] = {}
        self._trials: dict[str, list[TrialRecord]] = {}
        self._fh = None
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._open()
            self._write({"kind": "header",
                         "format_version": STORE_FORMAT_VERSION})

    # -- persistence ------------------------------------------------------

    def _open(self):
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")

    def _write(self, doc: dict) -> None:
        self._open()
        self._fh.write(json.dumps(doc, sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            raw = fh.read()
        # a crash mid-append leaves a final line with no newline; split()
        # then parks it (or the empty string) in the last element, dropped here
        complete = raw.split("\n")[:-1]
        docs = []
        for i, line in enumerate(complete):
            if not line:
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if i == len(complete) - 1:
                    break  # truncated final record
                raise StudyError(f"corrupt store line {i + 1}") from exc
        if not docs or docs[0].get("kind") != "header":
            raise StudyError("store file has no header")
        if docs[0].get("format_version") != STORE_FORMAT_VERSION:
            raise StudyError("unsupported store format "
                             f"{docs[0].get('format_version')}")
        for doc in docs[1:]:
            if doc["kind"] == "study":
                self._studies[doc["name"]] = doc.get("params")
                self._trials.setdefault(doc["name"], [])
            elif doc["kind"] == "trial":
                rec = _record_from_dict(doc)
                self._trials.setdefault(rec.study, []).append(rec)
            else:
                raise StudyError(f"unknown record kind {doc['kind']!r}")
        self._open()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- studies ------------------------------------------------------------

    def create_study(self, name: str, param_names=None) -> None:
        if name in self._studies:
            raise StudyError(f"study {name!r} already exists")
        self._studies[name] = list(param_names) if param_names else None
        self._trials[name] = []
        self._write({"kind": "study", "name": name,
                     "params": self._studies[name]})

    def ensure_study(self, name: str, param_names=None) -> None:
        if name not in self._studies:
            self.create_study(name, param_names)

    def has_study(self, name: str) -> bool:
        return name in self._studies

    def studies(self) -> list[str]:
        return list(self._studies)

    # -- trials ------------------------------------------------------------

    def append_trial(self, record: TrialRecord) -> int:
        if record.study not in self._studies:
            raise StudyError(f"study {record.study!r} is not registered")
        registered = self._studies[record.study]
        if registered is not None:
            unknown = set(record.params) - set(registered)
            if unknown:
                raise StudyError(f"params {sorted(unknown)} not registered "
                                 f"for study {record.study!r}")
        next_id = len(self._trials[record.study])
        if record.trial_id is None:
            record.trial_id = next_id
        elif record.trial_id != next_id:
            raise StudyError(f"trial_id {record.trial_id} conflicts; "
                             f"next id for {record.study!r} is {next_id}")
        self._write(_record_to_dict(record))
        self._trials[record.study].append(record)
        return record.trial_id

    def trials(self, study: str) -> list[TrialRecord]:
        if study not in self._studies:
            raise StudyError(f"study {study!r} is not registered")
        return list(self._trials[study])

    def complete_trials(self, study: str) -> list[TrialRecord]:
        return [t for t in self.trials(study) if t.state == "complete"]

    def best_trial(self, study: str) -> TrialRecord:
        """Highest score among completed trials; ties go to the lowest id."""
        complete = self.complete_trials(study)
        if not complete:
            raise StudyError(f"study {study!r} has no completed trials")
        return max(complete, key=lambda t: (t.score, -t.trial_id))


def _record_to_dict(rec: TrialRecord) -> dict:
    return {
        "kind": "trial",
        "study": rec.study,
        "trial_id": rec.trial_id,
        "params": rec.params,
        "score": rec.score if math.isfinite(rec.score) else None,
        "state": rec.state,
        "wall_time_s": rec.wall_time_s,
        "seed": rec.seed,
    }


def _record_from_dict(doc: dict) -> TrialRecord:
    score = doc.get("score")
    return TrialRecord(
        study=doc["study"],
        trial_id=doc["trial_id"],
        params=doc["params"],
        score=math.nan if score is None else float(score),
        state=doc["state"],
        wall_time_s=doc.get("wall_time_s", 0.0),
        seed=doc.get("seed"),
    )


def export_rows(store: StudyStore, studies=None) -> tuple[list[str], list[list]]:
    """Tabular view of trial records for external plotting or importance
    analysis: one row per trial, a column per parameter seen anywhere."""
    names = studies if studies is not None else store.studies()
    param_cols: list[str] = []
    for name in names:
        for t in store.trials(name):
            for k in t.params:
                if k not in param_cols:
                    param_cols.append(k)
    header = ["study", "trial_id", "state", "score", "wall_time_s",
              "seed"] + param_cols
    rows = []
    for name in names:
        for t in store.trials(name):
            row = [t.study, t.trial_id, t.state,
                   "" if math.isnan(t.score) else repr(t.score),
                   repr(t.wall_time_s),
                   "" if t.seed is None else t.seed]
            row += [("" if k not in t.params else t.params[k])
                    for k in param_cols]
            rows.append(row)
    return header, rows


def export_csv(store: StudyStore, path, studies=None) -> None:
    header, rows = export_rows(store, studies)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
