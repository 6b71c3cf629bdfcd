import dataclasses

import pytest

from dcan import config as C


def test_defaults_validate():
    cfg = C.validate(C.Config())
    assert cfg.net.input_size == 64 and cfg.fusion.t_o == 0.5 and cfg.train.lr0 == 0.02


def test_parse_all_value_kinds():
    cfg = C.parse("""
    # comment line
    net.channels_per_stage = 8, 16, 32   # trailing comment
    net.branch_taps=3,2
    train.max_iters = 10
    train.augment = no
    fusion.t_c = 0.4
    scene.malignant_mode = true
    augment.rotation_choices = 0, 90, 180, 270
    """)
    assert cfg.net.channels_per_stage == (8, 16, 32)
    assert cfg.net.branch_taps == (2, 3)
    assert cfg.train.max_iters == 10 and cfg.train_opts.augment is False
    assert cfg.fusion.t_c == 0.4 and cfg.scene.malignant_mode is True
    assert cfg.augment.rotation_choices == (0.0, 90.0, 180.0, 270.0)


@pytest.mark.parametrize("text, fragment", [
    ("net.nope = 1", "<config>:1: unknown key 'net.nope'"),
    ("\nbogus.x = 1", "<config>:2: unknown key"),
    ("net.input_size = big", "<config>:1: bad value"),
    ("net.input_size", "<config>:1: expected"),
    ("input_size = 3", "section.key"),
    ("train.max_iters = 1\ntrain.max_iters = 2", "<config>:2: 'train.max_iters' already set on line 1"),
    ("train.augment = maybe", "bad value"),
    ("fusion.t_o = 1.5", "t_o"),
    ("net.input_size = 60", "divisible"),
])
def test_errors_are_line_numbered(text, fragment):
    with pytest.raises(C.ConfigError) as err:
        C.parse(text)
    assert fragment in str(err.value)


def test_every_section_field_is_addressable():
    cfg = C.Config()
    for section, attrs in C.SECTIONS.items():
        for attr in attrs:
            for f in dataclasses.fields(getattr(cfg, attr)):
                value = getattr(getattr(cfg, attr), f.name)
                shown = ", ".join(map(str, value)) if isinstance(value, tuple) else str(value).lower()
                if isinstance(value, tuple) and not value:
                    continue
                parsed = C.parse(f"{section}.{f.name} = {shown}")
                assert getattr(getattr(parsed, attr), f.name) == value


def test_reference_lists_every_key(tmp_path):
    ref = C.reference()
    assert "| `net.input_size` | `64` |" in ref
    assert "| `fusion.min_area` | `64` |" in ref
    assert "| `train.augment` | `true` |" in ref
    p = tmp_path / "c.cfg"
    p.write_text("data.n_scenes = 2\n")
    assert C.load(p).data.n_scenes == 2
