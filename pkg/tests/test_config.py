import json

import pytest

from exitrate.config import ConfigError, load_config, parse_config, reference_config_text

MINIMAL = {"system": {"A": [[-1.0]], "B": [[[1.0]]]},
           "domain": {"box": {"lower": [-1.0], "upper": [1.0]}},
           "diffusion": {"base": [[1.0]]},
           "epsilon": 0.5}


def _errors(doc):
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps(doc))
    return info.value.errors


def test_minimal_config():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg.system.dim == 1 and cfg.epsilons == [0.5]
    assert len(cfg.candidates) == 1 and cfg.controls is None
    assert cfg.x0.tolist() == [0.0]


def test_negative_epsilon_named():
    errs = _errors(dict(MINIMAL, epsilon=-0.1))
    assert [e["path"] for e in errs] == ["epsilon"]
    errs = _errors(dict(MINIMAL, epsilon=[0.5, 0.0]))
    assert errs[0]["path"] == "epsilon[1]"


def test_channel_row_mismatch_named():
    doc = dict(MINIMAL, system={"A": [[-1.0]], "B": [[[1.0]], [[1.0], [2.0]]]})
    errs = _errors(doc)
    assert errs[0]["path"] == "system.B[1]" and "channel 1" in errs[0]["message"]


def test_all_errors_collected():
    doc = dict(MINIMAL, epsilon=-1, bogus=3, run={"seed": -2, "resolution": 2})
    doc["domain"] = {"ball": {"center": [0.0], "radius": -1.0}}
    paths = {e["path"] for e in _errors(doc)}
    assert {"bogus", "epsilon", "run.seed", "run.resolution", "domain.ball"} <= paths


def test_unknown_keys_rejected():
    paths = [e["path"] for e in _errors(dict(MINIMAL, run={"sed": 1}))]
    assert paths == ["run.sed"]
    doc = dict(MINIMAL, diffusion={"base": [[1.0]], "modulation": {"kind": "constant",
                                                                   "gamma": 1}})
    assert _errors(doc)[0]["path"] == "diffusion.modulation"


def test_syntax_error_position():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "system": [1,\n}')
    err = info.value.errors[0]
    assert err["line"] == 3 and err["column"] == 1


def test_dimension_and_candidate_checks():
    doc = dict(MINIMAL, feedback_candidates=[[[[1.0, 2.0]]]],
               diffusion={"base": [[1.0, 0.0], [0.0, 1.0]]})
    paths = {e["path"] for e in _errors(doc)}
    assert {"feedback_candidates[0]", "diffusion"} <= paths


def test_ellipticity_is_validated():
    doc = dict(MINIMAL, diffusion={"base": [[1.0]],
                                   "modulation": {"kind": "saturating", "beta": -1.5}})
    assert _errors(doc)[0]["path"] == "diffusion"


def test_reference_config_loads(tmp_path):
    cfg = parse_config(reference_config_text())
    assert cfg.system.n_channels == 2 and len(cfg.candidates) >= 2
    assert cfg.epsilons == sorted(cfg.epsilons, reverse=True)
    p = tmp_path / "ref.json"
    p.write_text(reference_config_text())
    assert load_config(p).digest() == cfg.digest()
