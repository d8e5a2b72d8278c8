import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memsim.cache import (HIT, MISS_INSTALLED, MISS_ISSUED, MISS_MERGED, STALL_MSHR_FULL, STALL_QUEUE_FULL,
                          BankedCache, CacheBank)
from memsim.config import CacheLevelConfig
from memsim.errors import BankMismatch, MemSimError, OrphanFill
from memsim.protocol import ORIGIN_L1, MemRequest, MemResponse

from oracles import FunctionalLRU, drive_banked, random_trace

CFG = CacheLevelConfig(capacity_bytes=1024, ways=2, line_size=64, mshr_per_bank=2, hit_latency=2,
                       miss_queue_depth=2, num_banks=1)


def req(i, addr, write=False, origin=0):
    return MemRequest.make(i, addr, 64, is_write=write, origin=origin)


def fill_line(bank, line, now=0):
    return bank.fill(MemResponse(0, line, now), now)


def test_cold_miss():
    assert CacheBank(CFG).access(req(1, 0x40), 0).kind == MISS_ISSUED


def test_fill_then_hit():
    b = CacheBank(CFG)
    b.access(req(1, 0x40), 0)
    assert fill_line(b, 0x40, 5) == [1]
    out = b.access(req(2, 0x44), 6)
    assert out.kind == HIT and out.ready_cycle == 8


def test_merge_sends_one_request():
    b = CacheBank(CFG)
    assert b.access(req(1, 0x80), 0).kind == MISS_ISSUED
    assert b.access(req(2, 0x84), 1).kind == MISS_MERGED
    assert b.access(req(3, 0x88), 2).kind == MISS_MERGED
    assert len(b.miss_queue) == 1
    assert fill_line(b, 0x80, 10) == [1, 2, 3]
    assert [t for t, _ in b.completions] == [12, 12, 12]


def test_dirty_eviction_writes_back():
    b = CacheBank(CFG)     # 8 sets of 2 ways; lines 0x0, 0x200, 0x400 share set 0
    for i, a in enumerate((0x0, 0x200)):
        b.access(req(i + 1, a, write=(i == 0)), i)
        b.drain_miss_queue(1)
        fill_line(b, a, i)
    b.access(req(3, 0x400), 3)
    b.drain_miss_queue(1)
    fill_line(b, 0x400, 4)
    assert b.writebacks == 1
    wb = b.drain_miss_queue(5)
    assert len(wb) == 1 and wb[0].is_write and wb[0].line_address == 0x0
    assert not b.contains(0x0) and b.contains(0x200) and b.contains(0x400)
    # the writeback ack is not a fill
    assert b.fill(MemResponse(wb[0].id, 0x0, 9), 9) == []
    assert not b.writebacks_pending


def test_drain_fifo():
    b = CacheBank(CFG)
    b.access(req(1, 0x0), 0)
    b.access(req(2, 0x40), 0)
    a, c = (r.line_address for _, r in b.miss_queue)
    assert [r.line_address for r in b.drain_miss_queue(1)] == [a]
    assert [q.line_address for _, q in b.miss_queue] == [c]
    assert b.drain_miss_queue(0) == []
    b.drain_miss_queue(1)
    assert b.drain_miss_queue(1) == []


def test_mshr_full_stall():
    b = CacheBank(CFG)
    b.access(req(1, 0x0), 0)
    b.access(req(2, 0x40), 0)
    assert b.access(req(3, 0x80), 0).kind == STALL_MSHR_FULL


def test_miss_queue_full_stall():
    cfg = CacheLevelConfig(capacity_bytes=1024, ways=2, line_size=64, mshr_per_bank=4, miss_queue_depth=1,
                           num_banks=1)
    b = CacheBank(cfg)
    b.access(req(1, 0x0), 0)
    out = b.access(req(2, 0x40), 0)
    assert out.kind == STALL_QUEUE_FULL and not out


def test_stalled_head_stays_queued():
    b = CacheBank(CFG)
    for i, a in enumerate((0x0, 0x40, 0x80)):
        b.input_queue.append(req(i + 1, a))
    assert b.process_input(0) and b.process_input(0)
    out = b.process_input(0)
    assert out.kind == STALL_MSHR_FULL and len(b.input_queue) == 1
    assert b.process_input(1).kind == STALL_MSHR_FULL and b.stalls_mshr == 2
    b.drain_miss_queue(2)
    fill_line(b, 0x0, 2)
    assert b.process_input(3).kind == MISS_ISSUED and not b.input_queue


def test_writeback_from_above_installs_without_fetch():
    b = CacheBank(CFG)
    out = b.access(req(1, 0x40, write=True, origin=ORIGIN_L1), 0)
    assert out.kind == MISS_INSTALLED and not b.miss_queue and b.is_dirty(0x40)


def test_orphan_fill():
    with pytest.raises(OrphanFill):
        fill_line(CacheBank(CFG), 0x40)


def test_wrong_bank():
    cfg = CacheLevelConfig(capacity_bytes=1024, ways=2, line_size=64, num_banks=2)
    with pytest.raises(BankMismatch):
        CacheBank(cfg, 0, 2).access(req(1, 0x40), 0)


def test_icache_is_read_only():
    with pytest.raises(MemSimError):
        CacheBank(CFG, read_only=True).access(req(1, 0, write=True), 0)


def test_banked_routing():
    cfg = CacheLevelConfig(capacity_bytes=4096, ways=2, line_size=64, num_banks=4, input_queue_depth=1)
    c = BankedCache(cfg)
    assert c.bank_for(0x140) is c.banks[1]
    assert c.try_enqueue(req(1, 0x140)) and not c.try_enqueue(req(2, 0x40)) and c.try_enqueue(req(3, 0x80))
    assert not c.has_room(0x40) and c.has_room(0xC0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4]),
       st.integers(0, 8))
def test_lru_oracle_small(seed, banks, ways, delay):
    cfg = CacheLevelConfig(capacity_bytes=banks * ways * 64 * 4, ways=ways, line_size=64, mshr_per_bank=1,
                           miss_queue_depth=4, num_banks=banks)
    rng = np.random.default_rng(seed)
    trace = random_trace(rng, 300, 64)
    ref = FunctionalLRU(cfg.capacity_bytes, ways, 64)
    for a, _ in trace:
        ref.access(a)
    cache = drive_banked(cfg, trace, rng, delay)
    assert cache.counters()["misses"] == ref.misses
    assert cache.counters()["merges"] == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_one_request_per_line_between_fills(seed):
    rng = np.random.default_rng(seed)
    b = CacheBank(CacheLevelConfig(capacity_bytes=4096, ways=4, line_size=64, mshr_per_bank=8,
                                   miss_queue_depth=64, num_banks=1))
    sent: dict[int, int] = {}
    for k in range(200):
        line = int(rng.integers(0, 16)) * 64
        b.access(req(k + 1, line), k)
        for r in b.drain_miss_queue(64):
            if not r.is_write:
                sent[r.line_address] = sent.get(r.line_address, 0) + 1
                assert sent[r.line_address] == 1
        if rng.random() < 0.3 and b.mshrs:
            done = next(iter(b.mshrs))
            fill_line(b, done, k)
            sent.pop(done)


def test_service_reports_progress():
    b = CacheBank(CFG)
    for i, a in enumerate((0x0, 0x40, 0x80)):
        b.input_queue.append(req(i + 1, a))
    assert b.service(0) and b.service(0)
    assert not b.service(0) and not b.service(1)
    assert b.stalls_mshr == 2 and len(b.input_queue) == 1
