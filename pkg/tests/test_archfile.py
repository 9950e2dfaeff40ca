"""Architecture file parsing, serialization round-trips, and diagnostics."""

import pytest

from trainmem.archfile import load_preset, parse_arch, serialize_arch
from trainmem.builders import build_dc_transformer_cost, build_desk_cnn, build_wrn
from trainmem.errors import ArchSemanticError, ArchSyntaxError


def test_round_trip_desk():
    g = build_desk_cnn([8, 8], 4)
    text = serialize_arch(g)
    back = parse_arch(text)
    assert serialize_arch(back) == text
    assert back.out_shape == g.out_shape
    assert back.residual_blocks == g.residual_blocks
    assert back.total_param_count() == g.total_param_count()


@pytest.mark.parametrize("name,builder", [
    ("wrn-28-2", lambda: build_wrn(28, 2, 10)),
    ("dc-transformer-iwslt", build_dc_transformer_cost),
    ("desk-cnn", lambda: build_desk_cnn([8, 8], 4)),
])
def test_presets_match_builders(name, builder):
    preset = load_preset(name)
    built = builder()
    assert preset.total_param_count() == built.total_param_count()
    assert len(preset.residual_blocks) == len(built.residual_blocks)
    assert preset.batch_unit == built.batch_unit


def test_missing_preset():
    with pytest.raises(ArchSemanticError, match="not found"):
        load_preset("wrn-999")


def test_cycle_names_back_edge():
    text = "a = relu() <- b\nb = relu() <- a\nloss a\n"
    with pytest.raises(ArchSemanticError, match="back edge b -> a"):
        parse_arch(text)


def test_syntax_error_carries_line_and_column():
    text = "x = input(shape=4d)\ny = input(shape=scalar, dtype=int)\nthis is ! not a node\nloss x\n"
    with pytest.raises(ArchSyntaxError) as err:
        parse_arch(text)
    assert err.value.line == 3
    assert err.value.column >= 1


def test_bad_parameter_value():
    with pytest.raises(ArchSyntaxError):
        parse_arch("x = input(shape=@!)\nloss x\n")


def test_semantic_error_names_node():
    text = (
        "x = input(shape=3x8x8)\n"
        "y = input(shape=scalar, dtype=int)\n"
        "c = conv2d(c_in=4, c_out=8, k1=3, k2=3, stride=1, pad=1) <- x\n"
        "loss c\n"
    )
    with pytest.raises(ArchSemanticError, match="'c'"):
        parse_arch(text)


def test_unknown_kind():
    with pytest.raises(ArchSemanticError, match="unknown kind"):
        parse_arch("x = frobnicate()\nloss x\n")


def test_comments_and_blank_lines():
    text = (
        "# a comment\n"
        "name tiny\n\n"
        "x = input(shape=2d)   # trailing comment\n"
        "y = input(shape=scalar, dtype=int)\n"
        "l = linear(d_in=2, d_out=2) <- x\n"
        "loss_node = softmax_xent(classes=2) <- l, y\n"
        "loss loss_node\n"
    )
    g = parse_arch(text)
    assert g.name == "tiny"
    assert g.total_param_count() == 6
