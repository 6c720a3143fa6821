from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from mfw import catalog
from mfw.config import canonical_text, config_hash, load_config, parse_config, validate
from mfw.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """\
[model]
slow = linear
c1 = 1.0
g_x_gain = 1.0
coupling_F = 1.0

[scales]
epsilon = 0.1
delta = 0.01

[time]
T = 1.0
"""


@pytest.mark.parametrize("name, factory", [
    ("porous_medium", catalog.porous_medium), ("cahn_hilliard", catalog.cahn_hilliard),
    ("linear", catalog.linear), ("linear_increments", catalog.linear), ("linear_fast_aux", catalog.linear),
    ("linear_averaging", catalog.linear), ("scalar", catalog.scalar), ("scalar_tail", catalog.scalar),
    ("diagonal", catalog.diagonal), ("broken", catalog.broken),
])
def test_shipped_configs_match_catalog(name, factory):
    assert load_config(CONFIGS / f"{name}.ini").model == factory()


def test_unknown_key_reports_line():
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE + "dtt = 0.1\n")
    assert err.value.field == "time.dtt" and err.value.line == 13


def test_unparsable_value_reports_line():
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE.replace("c1 = 1.0", "c1 = one"))
    assert err.value.field == "model.c1" and err.value.line == 3


def test_unknown_section_and_variant():
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE + "[bogus]\nx = 1\n")
    assert err.value.field == "bogus"
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE.replace("slow = linear", "slow = burgers"))
    assert err.value.field == "model.slow" and err.value.line == 2


def test_model_errors_map_to_config_lines():
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE.replace("c1 = 1.0", "c1 = -1.0"))
    assert err.value.field == "model.c1" and err.value.line == 3


def test_bc_must_match_variant():
    with pytest.raises(ConfigurationError) as err:
        parse_config("[grid]\nbc = neumann\n[model]\nslow = linear\n")
    assert err.value.field == "grid.bc" and err.value.line == 2


def test_dt_rule_names_the_violation():
    cfg = parse_config(BASE + "dt = 0.001\n")
    with pytest.raises(ConfigurationError) as err:
        validate(cfg, "simulate")
    assert err.value.field == "time.dt" and err.value.line == 13
    assert "delta/20" in str(err.value)
    validate(parse_config(BASE + "dt = 0.0005\n"), "simulate")


def test_zeta_must_be_a_multiple_of_dt():
    cfg = parse_config(BASE + "dt = 0.0005\nzeta_schedule = 0.1, 0.0501\n")
    with pytest.raises(ConfigurationError) as err:
        validate(cfg, "increments")
    assert err.value.field == "time.zeta"


def test_gap_required_for_averaging_only():
    cfg = parse_config(BASE.replace("c1 = 1.0", "c1 = 20.0"))
    validate(cfg, "simulate")
    with pytest.raises(ConfigurationError) as err:
        validate(cfg, "average")
    assert "gap" in str(err.value)


def test_ratio_rule_for_ldp():
    cfg = parse_config(BASE.replace("delta = 0.01", "delta = 0.1") + "[experiment]\nthreshold = 1\n")
    validate(cfg, "simulate")
    with pytest.raises(ConfigurationError) as err:
        validate(cfg, "ldp-tail")
    assert "delta/epsilon" in str(err.value)


def test_schedule_must_decrease():
    with pytest.raises(ConfigurationError) as err:
        parse_config(BASE.replace("epsilon = 0.1", "schedule = 0.1, 0.2"))
    assert err.value.field == "scales.schedule"


def test_malformed_file():
    with pytest.raises(ConfigurationError):
        parse_config("no section here\n")


_LINES = [("model", "slow", "linear"), ("model", "c1", "1.0"), ("time", "T", "0.5"), ("run", "n_paths", "10"),
          ("scales", "epsilon", "0.2")]


@settings(max_examples=40, deadline=None)
@given(order=st.permutations(range(len(_LINES))), pad=st.sampled_from(["", " ", "  "]))
def test_canonical_form_ignores_layout(order, pad):
    by_sec = {}
    for i in order:
        sec, k, v = _LINES[i]
        by_sec.setdefault(sec, []).append(f"{k}{pad}={pad}{v}   # note")
    text = "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in by_sec.items())
    grouped = {}
    for sec, k, v in _LINES:
        grouped.setdefault(sec, []).append(f"{k} = {v}")
    ref = "\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in grouped.items())
    assert canonical_text(parse_config(text)) == canonical_text(parse_config(ref))
    assert config_hash(canonical_text(parse_config(text))) == config_hash(canonical_text(parse_config(ref)))


def test_canonical_form_reparses_to_same_model():
    cfg = load_config(CONFIGS / "porous_medium.ini")
    again = parse_config(canonical_text(cfg))
    assert again.model == cfg.model and canonical_text(again) == canonical_text(cfg)
