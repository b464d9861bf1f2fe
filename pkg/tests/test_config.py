import math

import pytest
from hypothesis import given, settings, strategies as st

from vlq import config as cfg


SAMPLE = """
[field]
kind = spectral
ks = 1,2,3
energies = 0.5,0.25,0.125
tau = 2.5
seed = 42

[Grid]
nx = 64
NV = 129
vmax = 6.0
"""


def test_parse_sections_and_case():
    tree = cfg.parse_config(SAMPLE)
    assert set(tree) == {"field", "Grid"}
    # keys keep their case
    assert "NV" in tree["Grid"] and "nv" not in tree["Grid"]


def test_typed_getters():
    tree = cfg.parse_config(SAMPLE)
    assert cfg.get_str(tree, "field", "kind") == "spectral"
    assert cfg.get_ints(tree, "field", "ks") == [1, 2, 3]
    assert cfg.get_floats(tree, "field", "energies") == [0.5, 0.25, 0.125]
    assert cfg.get_float(tree, "field", "tau") == 2.5
    assert cfg.get_int(tree, "field", "seed") == 42
    assert cfg.get_int(tree, "Grid", "nx") == 64


def test_defaults_and_missing():
    tree = cfg.parse_config(SAMPLE)
    assert cfg.get_float(tree, "field", "absent", 7.0) == 7.0
    with pytest.raises(cfg.ConfigError, match="missing key"):
        cfg.get_float(tree, "field", "absent")
    with pytest.raises(cfg.ConfigError, match="missing \\[vlasov\\]"):
        cfg.get_float(tree, "vlasov", "dt")


def test_bad_values():
    tree = cfg.parse_config("[a]\nx = fish\n")
    with pytest.raises(cfg.ConfigError):
        cfg.get_float(tree, "a", "x")
    with pytest.raises(cfg.ConfigError):
        cfg.get_int(tree, "a", "x")
    with pytest.raises(cfg.ConfigError):
        cfg.get_bool(tree, "a", "x")


def test_bool_spellings():
    tree = cfg.parse_config("[a]\np = true\nq = Off\nr = 1\n")
    assert cfg.get_bool(tree, "a", "p") is True
    assert cfg.get_bool(tree, "a", "q") is False
    assert cfg.get_bool(tree, "a", "r") is True


def test_syntax_error():
    with pytest.raises(cfg.ConfigError, match="syntax"):
        cfg.parse_config("key_without_section = 1\n")


def test_roundtrip_identity():
    tree = cfg.parse_config(SAMPLE)
    text = cfg.serialize_config(tree)
    assert cfg.parse_config(text) == tree
    # serialization is a fixed point of itself
    assert cfg.serialize_config(cfg.parse_config(text)) == text


def test_format_value_17_digits():
    assert cfg.format_value(math.pi) == "3.1415926535897931"
    assert cfg.format_value(0.1) == "0.10000000000000001"
    assert cfg.format_value(True) == "true"
    assert cfg.format_value([1, 2.5]) == "1,2.5"
    # float values survive a text roundtrip exactly
    assert float(cfg.format_value(math.pi)) == math.pi


_KEY = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"), whitelist_characters="_-"),
    min_size=1,
    max_size=12,
)
_VAL = st.one_of(
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.integers(-(10**12), 10**12),
    st.booleans(),
)


@given(st.dictionaries(_KEY, st.dictionaries(_KEY, _VAL, max_size=6), min_size=1, max_size=4))
@settings(max_examples=60, deadline=None)
def test_roundtrip_random_trees(tree):
    text = cfg.serialize_config(tree)
    back = cfg.parse_config(text)
    assert set(back) == set(tree)
    for sec in tree:
        for key, val in tree[sec].items():
            raw = back[sec][key]
            if isinstance(val, bool):
                assert cfg.get_bool(back, sec, key) == val
            elif isinstance(val, float):
                assert cfg.get_float(back, sec, key) == val
            else:
                assert cfg.get_int(back, sec, key) == val
            assert raw == cfg.format_value(val)


def test_manifest_roundtrip(tmp_path):
    tree = cfg.parse_config(SAMPLE)
    man = cfg.make_manifest("field-sample", tree, seed=42)
    path = tmp_path / "manifest.txt"
    cfg.write_config(path, man)
    back = cfg.read_config(path)
    assert back["manifest"]["command"] == "field-sample"
    assert back["manifest"]["seed"] == "42"
    # stripping the provenance recovers the original run config
    assert cfg.strip_manifest(back) == tree
