import pytest

from minispeech.config import Config, ConfigError


def test_parse_pairs_comments_and_blanks(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# heading\n\nsteps = 100\nmodel.dim=32  # trailing\n")
    cfg = Config.load(p)
    assert cfg.get_int("steps") == 100
    assert cfg.get_int("model.dim") == 32


def test_include_splices_and_later_keys_win(tmp_path):
    (tmp_path / "base.cfg").write_text("lr = 0.001\nsteps = 10\n")
    child = tmp_path / "sub" / "run.cfg"
    child.parent.mkdir()
    child.write_text("include ../base.cfg\nsteps = 20\n")
    cfg = Config.load(child)
    assert cfg.get_float("lr") == 0.001
    assert cfg.get_int("steps") == 20


def test_circular_include_rejected(tmp_path):
    a = tmp_path / "a.cfg"
    b = tmp_path / "b.cfg"
    a.write_text("include b.cfg\n")
    b.write_text("include a.cfg\n")
    with pytest.raises(ConfigError, match="circular"):
        Config.load(a)


def test_malformed_line_reports_location(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("steps = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        Config.load(p)


def test_missing_required_key_names_it():
    with pytest.raises(ConfigError, match="'seed'"):
        Config({}).get("seed")


def test_typed_getters_and_errors():
    cfg = Config({"n": "7", "x": "2.5", "flag": "true", "word": "abc"})
    assert cfg.get_int("n") == 7
    assert cfg.get_float("x") == 2.5
    assert cfg.get_bool("flag") is True
    assert cfg.get_int("absent", 3) == 3
    with pytest.raises(ConfigError, match="integer"):
        cfg.get_int("word")
    with pytest.raises(ConfigError, match="boolean"):
        cfg.get_bool("word")


def test_overrides_do_not_mutate_original():
    cfg = Config({"steps": "10"})
    new = cfg.with_overrides(["steps=20", "extra=1"])
    assert cfg.get_int("steps") == 10
    assert new.get_int("steps") == 20
    assert new.get_int("extra") == 1


def test_fingerprint_tracks_content_not_order():
    a = Config({"x": "1", "y": "2"})
    b = Config({"y": "2", "x": "1"})
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != Config({"x": "1", "y": "3"}).fingerprint()


def test_write_then_load_round_trips(tmp_path):
    cfg = Config({"model.dim": "32", "seed": "5"})
    out = tmp_path / "resolved.cfg"
    cfg.write(out)
    again = Config.load(out)
    assert again.values == cfg.values
    assert again.fingerprint() == cfg.fingerprint()
