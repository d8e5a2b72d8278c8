import dataclasses
import json

import pytest
from hypothesis import assume, given, settings, strategies as st

from memsim import HierarchyConfig, Policy, derive_output_ports, load_config, validate, with_override
from memsim.config import ArbitrationPolicy, boundaries, config_to_dict, dump_config, strip_derived
from memsim.errors import ConfigError, GroupIndivisible, MissingField, NonPowerOfTwo, ParseError, PortMismatch, ZeroField


@pytest.mark.parametrize("inputs,down,expected", [(32, 8, (8, False)), (4, 8, (4, True)), (8, 8, (8, True))])
def test_derive_output_ports(inputs, down, expected):
    assert derive_output_ports(inputs, down) == expected


def test_default_chain():
    cfg = validate(HierarchyConfig())
    assert cfg.memory.num_channels == 8
    assert cfg.l1_dcache.output_ports == min(4, 8)
    assert cfg.l1_dcache.num_banks == cfg.topology.cores_per_socket
    assert cfg.l1_icache.output_ports == 1
    assert cfg.l2.input_ports == 4 and cfg.l2.output_ports == 4
    mem = boundaries(cfg)[-1]
    assert (mem.num_inputs, mem.num_outputs) == (8, 8)


@pytest.mark.parametrize("ports,l2_out,mem_in", [(1, 1, 2), (2, 2, 4), (4, 4, 8), (8, 4, 8)])
def test_port_chain_per_channel_count(ports, l2_out, mem_in):
    cfg = validate(with_override(HierarchyConfig(), "mem_ports", ports))
    assert cfg.l2.output_ports == l2_out
    mem = boundaries(cfg)[-1]
    assert mem.num_inputs == mem_in and mem.num_outputs == min(mem_in, ports)


def test_l3_boundary():
    cfg = validate(with_override(with_override(HierarchyConfig(), "l3_enabled", True), "mem_ports", 4))
    assert cfg.l3.input_ports == 8 and cfg.l3.output_ports == 4
    assert cfg.l3.num_banks == 8


def test_arb_c_indivisible_groups():
    # three clusters feeding four outputs cannot split into equal slices
    base = HierarchyConfig(arbitration=ArbitrationPolicy(Policy.DISTRIBUTED_RR))
    cfg = dataclasses.replace(base, topology=dataclasses.replace(base.topology, num_clusters=3))
    with pytest.raises(GroupIndivisible):
        validate(with_override(cfg, "mem_ports", 4))


def test_direct_needs_equal_ports():
    cfg = with_override(HierarchyConfig(arbitration=ArbitrationPolicy(Policy.DIRECT)), "mem_ports", 4)
    with pytest.raises(PortMismatch):
        validate(cfg)


def test_channel_count_must_be_power_of_two():
    with pytest.raises(NonPowerOfTwo):
        validate(with_override(HierarchyConfig(), "mem_ports", 3))


def test_zero_field_rejected():
    with pytest.raises(ZeroField):
        validate(with_override(HierarchyConfig(), "l2.mshr_per_bank", 0))


def test_explicit_port_fields_checked():
    cfg = HierarchyConfig(l2=dataclasses.replace(HierarchyConfig().l2, output_ports=2))
    with pytest.raises(PortMismatch):
        validate(cfg)


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    assert load_config(p) == HierarchyConfig()


def test_mem_ports_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"mem_ports": 4}))
    assert load_config(p).memory.num_channels == 4


def test_malformed_names_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "l2": {\n    "ways": "eight"\n  }\n}\n')
    with pytest.raises(ParseError) as exc:
        load_config(p)
    assert "l2.ways" in str(exc.value)


def test_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"l2": {"wayz": 8}}')
    with pytest.raises(ParseError, match="wayz"):
        load_config(p)


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"l2": ')
    with pytest.raises(ParseError):
        load_config(p)


def test_null_value_is_missing(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"l2": {"ways": null}}')
    with pytest.raises(MissingField):
        load_config(p)


def test_shipped_default_config_matches_defaults():
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / "default.json"
    assert load_config(path) == HierarchyConfig()


def test_policy_aliases():
    assert Policy.parse("A") is Policy.CROSSBAR
    assert Policy.parse("arb-b") is Policy.SOURCE_RR
    assert Policy.parse("distributed_rr") is Policy.DISTRIBUTED_RR


configs = st.builds(
    lambda ports, l3, policy, clusters, cores: with_override(with_override(with_override(
        dataclasses.replace(HierarchyConfig(), topology=dataclasses.replace(
            HierarchyConfig().topology, num_clusters=clusters, cores_per_socket=cores)),
        "mem_ports", ports), "l3_enabled", l3), "arbitration", policy),
    st.sampled_from([1, 2, 4, 8, 16]), st.booleans(),
    st.sampled_from([Policy.CROSSBAR, Policy.SOURCE_RR, Policy.DISTRIBUTED_RR]),
    st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4, 8]))


@settings(max_examples=60, deadline=None)
@given(configs)
def test_validate_properties(cfg):
    try:
        v = validate(cfg)
    except ConfigError:
        assume(False)
    assert validate(v) == v
    ch = v.memory.num_channels
    for lvl in (v.l1_dcache, v.l2) + ((v.l3,) if v.l3.enabled else ()):
        assert lvl.output_ports == min(lvl.input_ports, ch)
        assert lvl.num_banks == lvl.input_ports


@settings(max_examples=40, deadline=None)
@given(configs)
def test_round_trip(tmp_path_factory, cfg):
    p = tmp_path_factory.mktemp("rt") / "c.json"
    dump_config(cfg, p)
    assert load_config(p) == strip_derived(cfg)
    assert config_to_dict(load_config(p)) == config_to_dict(strip_derived(cfg))
