import dataclasses
import json

import jsonschema
import numpy as np
import pytest
import yaml

from grantfree.harness import (
    ConfigError,
    ExperimentSpec,
    FadingSpec,
    ResultRecord,
    dbm_to_watts,
    dump_spec,
    emit,
    format_records,
    load_records,
    load_spec,
    preset_desk,
    preset_section6,
    run_experiment,
    schema_path,
    spec_from_dict,
    spec_to_dict,
)


def tiny(**kw):
    base = dict(
        n_devices=120,
        pilot_len=24,
        n_antennas=4,
        activity_prob=0.1,
        power_dbm=0.0,
        noise_psd_dbm_hz=-169.0,
        bandwidth_hz=1e6,
        sweep_axis="n_antennas",
        sweep_values=(2, 4),
        trials=40,
        seed=7,
        chunk_size=16,
        se_samples=2000,
    )
    base.update(kw)
    return ExperimentSpec(**base)


def test_units():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    spec = preset_section6()
    # -169 dBm/Hz over 1 MHz is -109 dBm
    assert spec.noise_var == pytest.approx(10 ** (-109 / 10) / 1000, rel=1e-12)
    cfg = spec.config_at(8)
    assert cfg.pilot_energy == pytest.approx(90 * 10 ** (23 / 10) / 1000, rel=1e-12)
    assert (cfg.n_devices, cfg.pilot_len, cfg.n_antennas, cfg.activity_prob) == (2000, 90, 8, 0.05)


def test_presets():
    s = preset_section6(110)
    assert s.pilot_len == 110 and s.coherence_symbols == 1000
    d = preset_desk()
    assert (d.n_devices, d.power_dbm, d.sweep_values) == (400, 10.0, (8, 16, 32))
    with pytest.raises(ConfigError):
        preset_section6(1000)


def test_spec_validation():
    with pytest.raises(ConfigError):
        tiny(sweep_values=(4, 2))
    with pytest.raises(ConfigError):
        tiny(sweep_values=(2, 2))
    with pytest.raises(ConfigError):
        tiny(sweep_values=())
    with pytest.raises(ConfigError):
        tiny(sweep_axis="bandwidth")
    with pytest.raises(ConfigError):
        tiny(trials=0)
    with pytest.raises(ConfigError):
        tiny(outputs=("empirical", "plots"))
    with pytest.raises(ConfigError):
        tiny(activity_prob=2.0)
    with pytest.raises(ConfigError):
        tiny(sweep_values=(2.5,))
    with pytest.raises(ConfigError):
        FadingSpec("lognormal")
    with pytest.raises(ConfigError):
        FadingSpec("constant")
    assert tiny(sweep_axis="power_dbm", sweep_values=(-3.5, 0.0)).sweep_values == (-3.5, 0.0)


def test_fading_fixed_across_sweep_and_seeded():
    a = tiny().build_fading()
    b = tiny().build_fading()
    assert np.array_equal(a.betas, b.betas)
    assert not np.array_equal(a.betas, tiny(seed=8).build_fading().betas)
    g = tiny(fading=FadingSpec("grid")).build_fading()
    assert np.array_equal(g.betas, tiny(fading=FadingSpec("grid"), seed=1).build_fading().betas)
    c = tiny(fading=FadingSpec("constant", beta_db=-100.0)).build_fading()
    assert np.all(c.betas == pytest.approx(1e-10))


def test_yaml_roundtrip(tmp_path):
    spec = tiny(fixed_pilots=True, onsager="scalar", coherence_symbols=500)
    text = dump_spec(spec)
    p = tmp_path / "s.yaml"
    p.write_text(text)
    assert load_spec(p) == spec
    assert spec_from_dict(spec_to_dict(preset_desk())) == preset_desk()


def test_yaml_errors(tmp_path):
    doc = spec_to_dict(tiny())
    doc["colour"] = "blue"
    with pytest.raises(ConfigError, match="unknown"):
        spec_from_dict(doc)
    doc = spec_to_dict(tiny())
    del doc["sweep"]
    with pytest.raises(ConfigError, match="missing"):
        spec_from_dict(doc)
    doc = spec_to_dict(tiny())
    doc["amp"]["warp"] = 9
    with pytest.raises(ConfigError):
        spec_from_dict(doc)
    p = tmp_path / "bad.yaml"
    p.write_text("n_devices: [1,\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_spec(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_spec(tmp_path / "missing.yaml")


@pytest.fixture(scope="module")
def records():
    return run_experiment(tiny())


def test_records_content(records):
    assert [r.sweep_value for r in records] == [2.0, 4.0]
    for r in records:
        assert r.trials == 40
        assert r.n_active + r.n_inactive == 40 * 120
        assert r.p_md_lo <= r.p_md <= r.p_md_hi and r.p_fa_lo <= r.p_fa <= r.p_fa_hi
        assert 0 <= r.p_md_exact <= 1 and 0 <= r.p_fa_exact <= 1
        assert r.tau_sq_se > 0 and r.tau_sq_amp > 0
        assert r.upsilon_asym + r.delta_upsilon_asym == pytest.approx(1.0)
        assert isinstance(r.consistent, bool)
        assert r.wall_clock_s is not None


def test_analytic_only_has_no_empirical_fields():
    recs = run_experiment(tiny(outputs=("analytic_exact",)))
    assert recs[0].p_md is None and recs[0].p_md_exact is not None
    assert recs[0].upsilon_asym is None and recs[0].consistent is None


def test_output_formats_roundtrip(records, tmp_path):
    for fmt in ("csv", "json"):
        p = tmp_path / f"r.{fmt}"
        emit(records, p, fmt)
        back = load_records(p)
        assert back == records
    text = format_records(records, "csv")
    assert "wall_clock_s" not in text.splitlines()[0]
    assert "wall_clock_s" in format_records(records, "csv", include_timing=True)
    assert text.endswith("\n") and "\r" not in text
    with pytest.raises(ValueError):
        format_records(records, "xlsx")


def test_json_schema(records):
    schema = json.loads(schema_path().read_text())
    doc = json.loads(format_records(records, "json"))
    jsonschema.validate(doc, schema)
    doc["records"][0]["p_md"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, schema)
    empty = json.loads(format_records([], "json"))
    jsonschema.validate(empty, schema)


def test_records_seed_dependence(records):
    again = run_experiment(tiny())
    assert format_records(again) == format_records(records)
    other = run_experiment(tiny(seed=8))
    assert format_records(other) != format_records(records)


def test_byte_identical_across_worker_counts(records, tmp_path):
    emit(records, tmp_path / "w1.csv")
    emit(run_experiment(tiny(), workers=2), tmp_path / "w2.csv")
    emit(run_experiment(tiny(), workers=3), tmp_path / "w3.csv")
    one = (tmp_path / "w1.csv").read_bytes()
    assert one == (tmp_path / "w2.csv").read_bytes() == (tmp_path / "w3.csv").read_bytes()


def test_chunking_does_not_change_results(records):
    other = run_experiment(tiny(chunk_size=7))
    assert format_records(other) == format_records(records)


def test_fixed_pilots_option():
    a = run_experiment(tiny(fixed_pilots=True, sweep_values=(4,)))
    b = run_experiment(tiny(sweep_values=(4,)))
    assert a[0].n_active == b[0].n_active  # activity streams unaffected
    assert format_records(a) != format_records(b)


def test_pilot_len_sweep_keeps_symbol_power():
    spec = tiny(sweep_axis="pilot_len", sweep_values=(20, 40))
    c20, c40 = spec.config_at(20), spec.config_at(40)
    assert c40.pilot_energy == pytest.approx(2 * c20.pilot_energy)


def test_workers_must_be_positive():
    with pytest.raises(ConfigError):
        run_experiment(tiny(), workers=0)


def test_record_fields_match_schema():
    schema = json.loads(schema_path().read_text())
    props = schema["properties"]["records"]["items"]["properties"]
    fields = [f.name for f in dataclasses.fields(ResultRecord)]
    assert set(props) == set(fields)


def test_yaml_is_plain():
    doc = yaml.safe_load(dump_spec(preset_section6()))
    assert doc["sweep"] == {"axis": "n_antennas", "values": [4, 8, 16, 32, 64]}
