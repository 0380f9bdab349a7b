"""End-to-end network simulation checks.

Each scenario runs a deterministic mining phase, closes reaffirmation
windows on-chain, then bootstraps joining nodes. The central claims:
snapshot bootstrap reaches the exact same UTXO state as replaying from
genesis, fault injection never tricks a joiner into an unreaffirmed
snapshot, and legacy nodes stay untouched by the protocol overlay.
"""

import struct

import pytest

from coinprune.coordination import PulseParams
from coinprune.hashing import hash256
from coinprune.appdata import combined_tag
from coinprune.netsim import (NodeConfig, SimError, SimScenario, format_scenario,
                              parse_scenario, run_simulation)
from coinprune.snapshot import serialize_utxo_set

PARAMS = PulseParams(delta_p=200, delta_r=50, delta_d=6, k=5)


def _scenario(**overrides) -> SimScenario:
    nodes = overrides.pop("nodes", (
        NodeConfig("m0", "miner"),
        NodeConfig("m1", "miner"),
        NodeConfig("m2", "miner"),
        NodeConfig("full0", "full"),
        NodeConfig("legacy0", "full", coinprune=False),
        NodeConfig("jcp", "joining"),
        NodeConfig("jleg", "joining", coinprune=False),
    ))
    base = dict(nodes=nodes, params=PARAMS, chain_length=460, seed=0)
    base.update(overrides)
    return SimScenario(**base)


@pytest.fixture(scope="module")
def honest_run():
    return run_simulation(_scenario())


def test_all_honest_bootstrap_equivalence(honest_run):
    sim, report = honest_run
    canonical = serialize_utxo_set(sim.builder.utxo)
    for name in ("jcp", "jleg"):
        outcome = sim.join_results[name]
        assert outcome.accepted, outcome.reason
        assert serialize_utxo_set(sim.join_utxo[name]) == canonical
    assert sim.join_results["jcp"].via_snapshot
    assert sim.join_results["jcp"].pulse_index == 2
    assert not sim.join_results["jleg"].via_snapshot
    assert all(status == "accepted" for _, status, *_ in report.join_outcomes)


def test_accepted_tag_is_combined_tag(honest_run):
    sim, _ = honest_run
    outcome = sim.join_results["jcp"]
    assert outcome.accepted_tag == combined_tag(outcome.snapshot_id,
                                                outcome.appdata_id)
    rec = sim.pulses[outcome.pulse_index]
    assert outcome.accepted_tag == rec.genuine_tag == rec.outcome.tag


def test_legacy_nodes_never_see_state_messages(honest_run):
    sim, _ = honest_run
    gated = ("getstate", "inv", "stateheader", "statechunk")
    for line in sim.trace.lines:
        if not line.startswith("msg "):
            continue
        route, label = line.split()[1:3]
        src, dst = route.split(">")
        if label in gated:
            assert not src.startswith("jleg") and not dst.startswith("jleg")
            assert dst != "legacy0" and src != "legacy0"


def test_storage_accounting(honest_run):
    sim, report = honest_run
    rows = {r[0]: r for r in report.rows}
    parts = {b[0]: b for b in report.breakdown}
    for name, stored, _, _, _ in report.rows:
        assert stored == sum(parts[name][1:])
    # both accepted pulses pruned honest coinprune nodes below 401
    assert sim.nodes["m0"].pruned_below == 401
    assert sim.nodes["legacy0"].pruned_below == 0
    assert parts["full0"][2] < parts["legacy0"][2]
    assert parts["full0"][3] > 0 and parts["full0"][4] > 0
    assert parts["legacy0"][3] == 0 and parts["legacy0"][4] == 0
    assert rows["full0"][1] < rows["legacy0"][1]


def test_snapshot_join_cheaper_than_full_sync(honest_run):
    sim, _ = honest_run
    assert sim.nodes["jcp"].rx_bytes < sim.nodes["jleg"].rx_bytes


def test_joiner_appdata_matches_canonical(honest_run):
    sim, _ = honest_run
    store = sim.join_stores["jcp"]
    canonical = sim.appstore.entries()
    assert len(store) == len(canonical) > 0
    for entry in canonical[:50]:
        assert entry in store.lookup(entry.txid)


def test_rerun_is_byte_identical(honest_run):
    sim, report = honest_run
    sim2, report2 = run_simulation(_scenario())
    assert sim2.trace.to_text() == sim.trace.to_text()
    assert report2.to_csv() == report.to_csv()
    assert report2.breakdown_csv() == report.breakdown_csv()
    assert report2.pulse_outcomes == report.pulse_outcomes


def test_minority_bogus_tags_accept_genuine():
    nodes = (
        NodeConfig("m0", "miner"),
        NodeConfig("m1", "miner"),
        NodeConfig("m2", "miner"),
        NodeConfig("adv0", "miner", adversarial=True),
        NodeConfig("full0", "full"),
        NodeConfig("jcp", "joining"),
    )
    sim, report = run_simulation(_scenario(nodes=nodes, faults=("bogus_tags",),
                                           seed=11))
    for index, rec in sim.pulses.items():
        if rec.outcome is not None and rec.outcome.accepted:
            assert rec.outcome.tag == rec.genuine_tag
    outcome = sim.join_results["jcp"]
    assert outcome.accepted
    assert outcome.accepted_tag == sim.pulses[outcome.pulse_index].genuine_tag


def test_majority_bogus_tags_reaffirm_forged_state():
    # adversaries control the tally, so the forged snapshot IS the
    # reaffirmed one; the joiner accepts it consistently while honest
    # nodes refuse to prune against a tag that is not theirs
    nodes = (
        NodeConfig("adv0", "miner", adversarial=True),
        NodeConfig("adv1", "miner", adversarial=True),
        NodeConfig("adv2", "miner", adversarial=True),
        NodeConfig("m0", "miner"),
        NodeConfig("full0", "full"),
        NodeConfig("jcp", "joining"),
    )
    sim, _ = run_simulation(_scenario(nodes=nodes, faults=("bogus_tags",),
                                      seed=5))
    accepted = [rec for rec in sim.pulses.values()
                if rec.outcome is not None and rec.outcome.accepted]
    assert accepted and all(r.outcome.tag == r.bogus_tag for r in accepted)
    for name in ("m0", "full0", "adv0"):
        assert sim.nodes[name].pruned_below == 0
    outcome = sim.join_results["jcp"]
    assert outcome.accepted
    rec = sim.pulses[outcome.pulse_index]
    assert outcome.accepted_tag == rec.bogus_tag
    assert outcome.snapshot_id == rec.bogus_snap.id
    forged_txid = hash256(b"forged-riches" + struct.pack("<I", rec.height))
    assert (forged_txid, 0) in sim.join_utxo["jcp"]


def test_eclipsed_joiner_aborts_then_recovers():
    nodes = (
        NodeConfig("m0", "miner"),
        NodeConfig("m1", "miner"),
        NodeConfig("full0", "full"),
        NodeConfig("full1", "full"),
        NodeConfig("adv0", "full", adversarial=True),
        NodeConfig("jcp", "joining"),
    )
    sim, _ = run_simulation(_scenario(nodes=nodes,
                                      faults=("eclipse", "bogus_snapshot"),
                                      seed=2))
    outcome = sim.join_results["jcp"]
    assert outcome.accepted and outcome.attempts == 2
    assert outcome.accepted_tag == sim.pulses[outcome.pulse_index].genuine_tag
    assert any("aborted: snapshot was not the reaffirmed tag" in line
               for line in sim.trace.lines)


def test_bogus_chunks_are_detected_and_rerequested():
    nodes = (
        NodeConfig("m0", "miner"),
        NodeConfig("m1", "miner"),
        NodeConfig("full0", "full"),
        NodeConfig("adv0", "full", adversarial=True),
        NodeConfig("jcp", "joining"),
    )
    sim, _ = run_simulation(_scenario(nodes=nodes,
                                      faults=("eclipse", "bogus_chunks"),
                                      seed=3))
    outcome = sim.join_results["jcp"]
    assert outcome.accepted
    assert outcome.attempts >= 2  # eclipsed first attempt burns its retries
    assert any("mismatch from adv0" in line for line in sim.trace.lines)
    assert any("aborted: chunk retry budget exhausted" in line
               for line in sim.trace.lines)
    assert outcome.accepted_tag == sim.pulses[outcome.pulse_index].genuine_tag
    assert serialize_utxo_set(sim.join_utxo["jcp"]) \
        == serialize_utxo_set(sim.builder.utxo)


def test_no_supporting_miners_means_no_pruning():
    nodes = (
        NodeConfig("m0", "miner", coinprune=False),
        NodeConfig("m1", "miner", coinprune=False),
        NodeConfig("full0", "full"),
        NodeConfig("legacy0", "full", coinprune=False),
        NodeConfig("jcp", "joining"),
        NodeConfig("jleg", "joining", coinprune=False),
    )
    sim, report = run_simulation(_scenario(nodes=nodes, chain_length=300))
    assert all(status in ("skipped", "open")
               for _, _, status, _, _ in report.pulse_outcomes)
    assert any(status == "skipped"
               for _, _, status, _, _ in report.pulse_outcomes)
    for name in ("m0", "m1", "full0", "legacy0"):
        assert sim.nodes[name].pruned_below == 0
    canonical = serialize_utxo_set(sim.builder.utxo)
    for name in ("jcp", "jleg"):
        outcome = sim.join_results[name]
        assert outcome.accepted and not outcome.via_snapshot
        assert serialize_utxo_set(sim.join_utxo[name]) == canonical


def test_legacy_joiner_needs_an_unpruned_peer():
    nodes = (
        NodeConfig("m0", "miner"),
        NodeConfig("m1", "miner"),
        NodeConfig("full0", "full"),
        NodeConfig("jleg", "joining", coinprune=False),
    )
    scenario = _scenario(nodes=nodes)
    sim, report = run_simulation(scenario)
    outcome = sim.join_results["jleg"]
    assert not outcome.accepted
    assert outcome.reason == "no neighbor serves historic blocks"
    assert outcome.attempts == scenario.max_bootstrap_attempts
    assert ("jleg", "aborted", outcome.reason, outcome.attempts,
            sim.nodes["jleg"].rx_bytes) in report.join_outcomes


def test_obfuscated_snapshot_bootstrap_equivalence():
    sim, _ = run_simulation(_scenario(obfuscate=True, seed=4))
    outcome = sim.join_results["jcp"]
    assert outcome.accepted and outcome.via_snapshot
    # joiner holds commitment forms for pre-snapshot outputs, so compare
    # under obfuscating serialization, which is deterministic and
    # idempotent on both representations
    assert serialize_utxo_set(sim.join_utxo["jcp"], obfuscate=True) \
        == serialize_utxo_set(sim.builder.utxo, obfuscate=True)


def test_scenario_file_roundtrip():
    text = """
# comment line
seed = 7
blocks = 450
roles = miner:2:coinprune full:1:legacy full:1:adversarial joining:1:coinprune
params = delta_p=200 delta_r=50 delta_d=6 k=5
faults = bogus_tags
obfuscate = false
appdata = true
prune = true
txs_per_block = 8
neighbors = 6
"""
    scenario = parse_scenario(text)
    assert scenario.seed == 7
    assert scenario.params == PARAMS
    assert scenario.faults == ("bogus_tags",)
    assert scenario.neighbor_count == 6
    names = sorted(n.name for n in scenario.nodes)
    assert names == ["adv0", "full0", "join0", "miner0", "miner1"]
    # formatting groups roles, so one pass normalizes node order; after
    # that the textual form is a fixed point
    normalized = parse_scenario(format_scenario(scenario))
    assert sorted(normalized.nodes, key=lambda n: n.name) \
        == sorted(scenario.nodes, key=lambda n: n.name)
    assert parse_scenario(format_scenario(normalized)) == normalized
    assert format_scenario(normalized) == format_scenario(scenario)


def test_scenario_validation():
    with pytest.raises(SimError):
        parse_scenario("roles = miner:1:coinprune\nnot a key value pair\n")
    with pytest.raises(SimError):
        parse_scenario("blocks = 100\n")  # roles line is mandatory
    with pytest.raises(SimError):
        NodeConfig("x", "archivist")
    with pytest.raises(SimError):
        NodeConfig("x", "full", coinprune=False, adversarial=True)
    with pytest.raises(SimError):
        _scenario(nodes=(NodeConfig("a", "miner"), NodeConfig("a", "full")))
    with pytest.raises(SimError):
        _scenario(nodes=(NodeConfig("a", "full"),))
    with pytest.raises(SimError):
        _scenario(faults=("gremlins",))
