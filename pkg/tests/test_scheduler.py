import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reference_alloc import ReferenceAllocator

from minipilot.emulator import TaskPayload
from minipilot.errors import BlockSizeMismatch, DoubleFree, UnitTooLarge
from minipilot.model import PilotDescription, UnitDescription, validate_pilot
from minipilot.scheduler import (CONTINUOUS, HOMOGENEOUS, BlockFreeList,
                                 ContinuousScheduler, HomogeneousScheduler,
                                 fifo_schedule, fitted_service_costs,
                                 make_scheduler)

PAYLOAD = TaskPayload("sleep", 1.0, 0.0)


def model(nodes, cpn):
    return validate_pilot(PilotDescription("r", nodes, cpn, 3600.0))


def unit(uid, cores):
    return UnitDescription(unit_id=uid, cores=cores, payload=PAYLOAD)


class TestContinuous:
    def test_multi_node_unit_gets_whole_consecutive_nodes(self):
        sched = ContinuousScheduler(model(4, 16))
        alloc = sched.schedule(unit("u0", 32))
        assert alloc.cores == 32
        assert alloc.nodes() == ["node00000", "node00001"]
        assert set(alloc.slots) == {(f"node0000{n}", c)
                                    for n in (0, 1) for c in range(16)}

    def test_exact_fit_on_partially_used_node(self):
        sched = ContinuousScheduler(model(1, 16))
        fillers = [sched.schedule(unit(f"f{i}", 4)) for i in range(3)]
        assert all(a is not None for a in fillers)
        alloc = sched.schedule(unit("u0", 4))
        assert {c for _, c in alloc.slots} == {12, 13, 14, 15}

    def test_single_node_unit_never_spans_nodes(self):
        sched = ContinuousScheduler(model(2, 8))
        sched.schedule(unit("f0", 5))  # 3 cores left on node 0
        alloc = sched.schedule(unit("u0", 4))
        assert alloc.nodes() == ["node00001"]

    def test_nofit_returns_none_and_leaves_model_unchanged(self):
        m = model(2, 8)
        sched = ContinuousScheduler(m)
        sched.schedule(unit("f0", 8))
        sched.schedule(unit("f1", 8))
        before = m.free_slot_set()
        assert sched.schedule(unit("u0", 4)) is None
        assert m.free_slot_set() == before

    def test_unit_too_large_is_permanent_error(self):
        sched = ContinuousScheduler(model(2, 8))
        with pytest.raises(UnitTooLarge):
            sched.schedule(unit("u0", 17))

    def test_first_fit_prefers_lowest_node(self):
        sched = ContinuousScheduler(model(3, 4))
        a0 = sched.schedule(unit("a", 2))
        sched.unschedule(a0)
        a1 = sched.schedule(unit("b", 2))
        assert a1.nodes() == ["node00000"]

    def test_roundtrip_restores_free_set(self):
        m = model(4, 4)
        sched = ContinuousScheduler(m)
        before = m.free_slot_set()
        allocs = [sched.schedule(unit(f"u{i}", 3)) for i in range(4)]
        for a in allocs:
            sched.unschedule(a)
        assert m.free_slot_set() == before

    def test_double_free_rejected(self):
        sched = ContinuousScheduler(model(2, 4))
        alloc = sched.schedule(unit("u0", 2))
        sched.unschedule(alloc)
        with pytest.raises(DoubleFree):
            sched.unschedule(alloc)

    def test_visits_grow_with_busy_prefix(self):
        sched = ContinuousScheduler(model(64, 16))
        visits = []
        for i in range(32):
            sched.schedule(unit(f"u{i}", 32))
            visits.append(sched.last_visits)
        assert visits[-1] > visits[0]


class TestHomogeneous:
    def test_pops_blocks_in_node_order(self):
        sched = HomogeneousScheduler(model(4, 16), block_size=32)
        a0 = sched.schedule(unit("u0", 32))
        a1 = sched.schedule(unit("u1", 32))
        assert a0.nodes() == ["node00000", "node00001"]
        assert a1.nodes() == ["node00002", "node00003"]

    def test_sub_node_blocks(self):
        sched = HomogeneousScheduler(model(1, 16), block_size=4)
        allocs = [sched.schedule(unit(f"u{i}", 4)) for i in range(4)]
        assert all(a is not None for a in allocs)
        assert sched.schedule(unit("u4", 4)) is None

    def test_empty_freelist_is_nofit(self):
        sched = HomogeneousScheduler(model(2, 16), block_size=32)
        assert sched.schedule(unit("u0", 32)) is not None
        assert sched.schedule(unit("u1", 32)) is None

    def test_block_size_mismatch_rejected(self):
        sched = HomogeneousScheduler(model(2, 16), block_size=32)
        with pytest.raises(BlockSizeMismatch):
            sched.schedule(unit("u0", 16))

    def test_indivisible_block_size_rejected(self):
        with pytest.raises(BlockSizeMismatch):
            BlockFreeList(model(2, 16), block_size=5)

    def test_unschedule_pushes_block_back_whole(self):
        m = model(2, 16)
        sched = HomogeneousScheduler(m, block_size=32)
        before = m.free_slot_set()
        alloc = sched.schedule(unit("u0", 32))
        sched.unschedule(alloc)
        assert m.free_slot_set() == before
        assert len(sched.freelist) == 1

    def test_block_conservation_invariant(self):
        m = model(4, 16)
        sched = HomogeneousScheduler(m, block_size=32)
        allocs = [sched.schedule(unit(f"u{i}", 32)) for i in range(2)]
        fl = sched.freelist
        assert len(fl) * fl.block_size + m.busy_cores() == m.total_cores

    def test_double_free_rejected(self):
        sched = HomogeneousScheduler(model(2, 16), block_size=32)
        alloc = sched.schedule(unit("u0", 32))
        sched.unschedule(alloc)
        with pytest.raises(DoubleFree):
            sched.unschedule(alloc)


class TestFifo:
    def test_full_generation_placed(self):
        sched = ContinuousScheduler(model(2, 16))
        placed, blocked = fifo_schedule([unit(f"u{i}", 4) for i in range(8)],
                                        sched)
        assert len(placed) == 8 and not blocked

    def test_head_blocks_tail(self):
        sched = ContinuousScheduler(model(2, 16))
        units = [unit("big", 32), unit("small", 1)]
        sched.schedule(unit("taken", 1))
        placed, blocked = fifo_schedule(units, sched)
        assert not placed
        assert blocked[0].unit_id == "big"

    def test_exact_fit_schedules_immediately(self):
        sched = ContinuousScheduler(model(1, 4))
        placed, blocked = fifo_schedule([unit("u0", 4)], sched)
        assert len(placed) == 1 and not blocked


def _replay(seq, nodes, cpn, scheduler):
    """Replay an op sequence against scheduler and oracle, comparing after
    every operation."""
    oracle = ReferenceAllocator(nodes, cpn)
    m = scheduler.model
    live = {}
    for op, arg in seq:
        if op == "schedule":
            uid, cores = arg
            alloc = scheduler.schedule(unit(uid, cores))
            expected = oracle.schedule(uid, cores)
            if alloc is None:
                assert expected is None
            else:
                assert sorted(alloc.slots) == sorted(expected)
                live[uid] = alloc
        else:
            scheduler.unschedule(live[arg])
            oracle.unschedule(arg)
            del live[arg]
        assert m.free_slot_set() == oracle.free
        assert m.free_cores() + m.busy_cores() == m.total_cores
    return live


class TestOracleEquivalence:
    def test_interleaved_sequence_matches_oracle(self):
        rng = random.Random(7)
        nodes, cpn = 4, 4
        sched = ContinuousScheduler(model(nodes, cpn))
        live_ids = []
        seq = []
        for i in range(100):
            if live_ids and rng.random() < 0.45:
                uid = live_ids.pop(rng.randrange(len(live_ids)))
                seq.append(("unschedule", uid))
            else:
                uid = f"u{i}"
                cores = rng.randint(1, nodes * cpn // 2)
                seq.append(("schedule", (uid, cores)))
                live_ids.append(uid)
        # drop unschedules for units that never got placed
        placed = set()
        cleaned = []
        for op, arg in seq:
            if op == "schedule":
                cleaned.append((op, arg))
            elif arg in placed:
                cleaned.append((op, arg))
        # figure out placements by dry-running the oracle
        oracle = ReferenceAllocator(nodes, cpn)
        final = []
        for op, arg in cleaned:
            if op == "schedule":
                if oracle.schedule(arg[0], arg[1]) is not None:
                    placed.add(arg[0])
                final.append((op, arg))
            elif arg in placed:
                oracle.unschedule(arg)
                placed.discard(arg)
                final.append((op, arg))
        _replay(final, nodes, cpn, ContinuousScheduler(model(nodes, cpn)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=16), min_size=1,
                max_size=30),
       st.randoms(use_true_random=False))
def test_slot_conservation_property(sizes, rng):
    m = model(4, 8)
    sched = ContinuousScheduler(m)
    live = []
    for i, cores in enumerate(sizes):
        if live and rng.random() < 0.4:
            sched.unschedule(live.pop(rng.randrange(len(live))))
        alloc = sched.schedule(unit(f"u{i}", cores))
        if alloc is not None:
            live.append(alloc)
        held = sum(a.cores for a in live)
        assert m.busy_cores() == held
        assert m.free_cores() == m.total_cores - held


class TestEquivalenceAcrossKinds:
    def test_same_capacity_on_homogeneous_workload(self):
        # both schedulers fill the same pilot with the same number of units
        for kind in (CONTINUOUS, HOMOGENEOUS):
            m = model(8, 16)
            sched = make_scheduler(kind, m, block_size=32)
            placed, blocked = fifo_schedule(
                [unit(f"u{i}", 32) for i in range(6)], sched)
            assert len(placed) == 4
            assert len(blocked) == 2


class TestServiceCostFit:
    def test_fit_matches_independent_lstsq(self):
        base, visit = fitted_service_costs()
        n = np.array([512.0, 1024.0, 2048.0, 4096.0])
        w = np.array([18.0, 39.0, 129.0, 350.0])
        design = np.stack([n / 2.0, n ** 2 / 3.0], axis=1)
        coef, *_ = np.linalg.lstsq(design, w, rcond=None)
        assert np.isclose(base, coef[0])
        assert np.isclose(visit, coef[1])

    def test_fit_reproduces_reference_within_tolerance(self):
        base, visit = fitted_service_costs()
        for n, expected in ((512, 18.0), (1024, 39.0), (2048, 129.0),
                            (4096, 350.0)):
            predicted = base * n / 2.0 + visit * n ** 2 / 3.0
            assert abs(predicted - expected) / expected < 0.25
