"""Architecture description files.

One node per line:

    id = kind(param=value, ...) [<- input_id, ...]

plus `residual_block <entry> <exit>` annotation lines, a final `loss <id>`
line, optional `batch_unit examples|tokens` and `name <text>` headers,
blank lines, and `#` comments.  Integer tuples are written `3x32x32`.
Parsing a serialized graph reproduces it exactly.
"""

from __future__ import annotations

import re
from importlib import resources

from .errors import ArchSemanticError, ArchSyntaxError
from .graph import ComputationGraph, Node

_NODE_RE = re.compile(
    r"^(?P<id>[A-Za-z_][\w.]*)\s*=\s*(?P<kind>[A-Za-z_]\w*)\s*\((?P<params>[^)]*)\)"
    r"\s*(?:<-\s*(?P<inputs>[\w.,\s]+))?$"
)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        if not v:
            return "scalar"
        if len(v) == 1:
            return f"{v[0]}d"
        return "x".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str, line: int, col: int):
    text = text.strip()
    if text == "scalar":
        return ()
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    if re.fullmatch(r"-?\d+d", text):
        return (int(text[:-1]),)
    if re.fullmatch(r"-?\d+(x-?\d+)+", text):
        return tuple(int(x) for x in text.split("x"))
    try:
        return float(text)
    except ValueError:
        pass
    if re.fullmatch(r"[A-Za-z_][\w.]*", text):
        return text
    raise ArchSyntaxError(f"cannot parse value {text!r}", line, col)


def parse_arch(text: str, name: str = "arch") -> ComputationGraph:
    nodes: list[Node] = []
    blocks: list[tuple[str, str]] = []
    loss_id = None
    batch_unit = "examples"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        m = _NODE_RE.match(stripped)
        if m is None:
            if stripped.startswith("name "):
                name = stripped[5:].strip()
                continue
            if stripped.startswith("batch_unit "):
                batch_unit = stripped.split(None, 1)[1].strip()
                if batch_unit not in ("examples", "tokens"):
                    raise ArchSyntaxError(f"unknown batch unit {batch_unit!r}", lineno, 12)
                continue
            if stripped.startswith("residual_block"):
                parts = stripped.split()
                if len(parts) != 3:
                    raise ArchSyntaxError("residual_block needs entry and exit ids",
                                          lineno, len("residual_block") + 1)
                blocks.append((parts[1], parts[2]))
                continue
            if stripped.startswith("loss"):
                parts = stripped.split()
                if len(parts) != 2:
                    raise ArchSyntaxError("loss line needs exactly one node id", lineno, 5)
                loss_id = parts[1]
                continue
            col = len(line) - len(line.lstrip()) + 1
            raise ArchSyntaxError(f"unparseable node line {stripped!r}", lineno, col)
        params = {}
        body = m.group("params").strip()
        if body:
            for item in body.split(","):
                if "=" not in item:
                    col = line.find(item) + 1
                    raise ArchSyntaxError(f"parameter {item.strip()!r} lacks '='",
                                          lineno, col)
                key, val = item.split("=", 1)
                params[key.strip()] = _parse_value(val, lineno, line.find(val) + 1)
        inputs = ()
        if m.group("inputs"):
            inputs = tuple(x.strip() for x in m.group("inputs").split(",") if x.strip())
        nodes.append(Node(m.group("id"), m.group("kind"), inputs, params))
    if loss_id is None:
        raise ArchSemanticError("file defines no loss node")
    return ComputationGraph(nodes, loss_id, blocks, batch_unit, name)


def serialize_arch(graph: ComputationGraph) -> str:
    lines = [f"name {graph.name}"]
    if graph.batch_unit != "examples":
        lines.append(f"batch_unit {graph.batch_unit}")
    for node in graph.nodes:
        params = ", ".join(f"{k}={_format_value(v)}" for k, v in node.params.items())
        line = f"{node.node_id} = {node.op}({params})"
        if node.inputs:
            line += " <- " + ", ".join(node.inputs)
        lines.append(line)
    for entry, exit_ in graph.residual_blocks:
        lines.append(f"residual_block {entry} {exit_}")
    lines.append(f"loss {graph.loss_id}")
    return "\n".join(lines) + "\n"


PRESET_NAMES = ("wrn-28-2", "dc-transformer-iwslt", "desk-cnn")


def load_preset(name: str) -> ComputationGraph:
    fname = f"{name}.arch"
    ref = resources.files("trainmem.presets") / fname
    if not ref.is_file():
        raise ArchSemanticError(
            f"preset '{name}' not found (expected packaged file {fname})"
        )
    return parse_arch(ref.read_text(), name=name)


def load_arch(path_or_preset: str) -> ComputationGraph:
    """Load an architecture from a file path, or by preset name."""
    if path_or_preset in PRESET_NAMES:
        return load_preset(path_or_preset)
    with open(path_or_preset, "r", encoding="utf-8") as fh:
        return parse_arch(fh.read(), name=path_or_preset)
