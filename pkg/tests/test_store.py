"""Append-only store: sequences, round-trips, lineage, truncation."""

from __future__ import annotations

import json

import pytest

from evosignal.skills import LIBRARY, SEED_SKILL
from evosignal.store import Checkpoint, RunStore, StorageError, UnknownId
from evosignal.util import canonical_json


class TestAppend:
    def test_sequences_start_at_one_and_increase(self, tmp_path):
        store = RunStore(tmp_path / "run")
        assert store.append_event("generated", {"generation": 0}) == 1
        assert store.append_event("evaluated", {"generation": 0}) == 2
        assert store.append_skill(SEED_SKILL) == 3
        events = store.events()
        assert [e["seq"] for e in events] == [1, 2]

    def test_unknown_kind_rejected(self, tmp_path):
        store = RunStore(tmp_path / "run")
        with pytest.raises(StorageError):
            store.append("mystery", {})

    def test_capsule_serialization_is_a_fixpoint(self, tmp_path):
        store = RunStore(tmp_path / "run")
        capsule = {
            "skill": LIBRARY["bus-priority"].to_json_dict(),
            "fitness": 12.25,
            "metrics": {"avg_delay": 7.5},
            "generation": 3,
        }
        store.append_capsule(capsule)
        line = (tmp_path / "run" / "capsules.jsonl").read_text().strip()
        reloaded = json.loads(line)
        assert canonical_json(reloaded) == line

    def test_sequence_recovers_across_instances(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.append_event("generated", {})
        store.append_event("generated", {})
        again = RunStore(tmp_path / "run")
        assert again.append_event("generated", {}) == 3


class TestLineage:
    def test_seed_chain_is_length_one(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.append_skill(SEED_SKILL)
        assert [s.id for s in store.lineage("seed")] == ["seed"]

    def test_descendant_chain_walks_to_seed(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.append_skill(SEED_SKILL)
        parent = "seed"
        for g in range(3):
            skill = LIBRARY["distance-weighted"].with_lineage(
                id=f"g{g}", parent_id=parent, generation=g
            )
            store.append_skill(skill)
            parent = skill.id
        chain = store.lineage("g2")
        assert [s.id for s in chain] == ["g2", "g1", "g0", "seed"]

    def test_unknown_id(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.append_skill(SEED_SKILL)
        with pytest.raises(UnknownId):
            store.lineage("ghost")


class TestCheckpointAndTruncate:
    def test_checkpoint_round_trip(self, tmp_path):
        store = RunStore(tmp_path / "run")
        checkpoint = Checkpoint(
            generations_done=4,
            fitness_history=(1.0, 2.0, 2.0, 3.5),
            stagnation=1,
            best_skill_id="g3",
            best_fitness=3.5,
            generator_calls=16,
            record_counts={"skills.jsonl": 5, "capsules.jsonl": 2, "events.jsonl": 40},
            sequence=47,
            aggregates=({"fitness": 1.0, "avg_delay": 2.0, "avg_queue": 1.0, "throughput": 9.0},),
            elapsed_seconds=1.5,
        )
        store.write_checkpoint(checkpoint)
        assert RunStore(tmp_path / "run").read_checkpoint() == checkpoint

    def test_truncate_drops_partial_records(self, tmp_path):
        store = RunStore(tmp_path / "run")
        for i in range(5):
            store.append_event("generated", {"generation": 0, "candidate": i})
        counts = store.record_counts()
        store.append_event("generated", {"generation": 1, "candidate": 0})
        store.append_event("evaluated", {"generation": 1})
        store.truncate_to(counts)
        events = store.events()
        assert len(events) == 5
        assert store.append_event("generated", {}) == 6  # sequence rewinds too
