"""Declarative tree structure and its XML form.

The accepted document looks like::

    <BehaviorTree>
      <Fallback name="pick_housing">
        <Condition name="IsTrue" key="grasped/housing"/>
        <Retry n="2"><Timeout ms="3000"><Action name="EstimatePose" object="housing"/></Timeout></Retry>
      </Fallback>
    </BehaviorTree>

Control elements only accept the attributes listed in ``_ALLOWED``; leaves
require ``name`` and pass every other attribute through as a string param.
"""
from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from cellkit.bt.status import CONTROL_KINDS, DECORATOR_KINDS, LEAF_KINDS, NODE_KINDS

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_ALLOWED = {
    "Sequence": {"name"},
    "ReactiveSequence": {"name"},
    "Fallback": {"name"},
    "Parallel": {"name", "k"},
    "Timeout": {"name", "ms"},
    "Retry": {"name", "n"},
}
_REQUIRED_INT = {"Parallel": "k", "Timeout": "ms"}


class TreeParseError(ValueError):
    """Malformed XML; carries the 1-based line and 0-based column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class TreeStructureError(ValueError):
    """Well-formed XML that violates the tree schema."""


@dataclass
class NodeSpec:
    kind: str
    name: str
    params: dict[str, str] = field(default_factory=dict)
    children: list["NodeSpec"] = field(default_factory=list)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class TreeDefinition:
    root: NodeSpec

    def leaf_names(self) -> list[str]:
        return [n.name for n in self.root.walk() if n.kind in LEAF_KINDS]

    def to_xml(self) -> str:
        doc = ET.Element("BehaviorTree")
        doc.append(_to_element(self.root))
        ET.indent(doc)
        return ET.tostring(doc, encoding="unicode") + "\n"


def _to_element(spec: NodeSpec) -> ET.Element:
    attrs = {"name": spec.name}
    if spec.kind not in LEAF_KINDS and spec.name == spec.kind:
        attrs = {}
    attrs.update(spec.params)
    el = ET.Element(spec.kind, attrs)
    for child in spec.children:
        el.append(_to_element(child))
    return el


def validate(spec: NodeSpec, path: str = "") -> None:
    here = f"{path}/{spec.kind}:{spec.name}"
    if spec.kind not in NODE_KINDS:
        raise TreeStructureError(f"{here}: unknown node kind {spec.kind!r}")
    if not _IDENT.match(spec.name):
        raise TreeStructureError(f"{here}: invalid name {spec.name!r}")
    n = len(spec.children)
    if spec.kind in LEAF_KINDS and n:
        raise TreeStructureError(f"{here}: {spec.kind} nodes take no children, got {n}")
    if spec.kind in DECORATOR_KINDS and n != 1:
        raise TreeStructureError(f"{here}: {spec.kind} takes exactly one child, got {n}")
    if spec.kind in CONTROL_KINDS and n < 1:
        raise TreeStructureError(f"{here}: {spec.kind} needs at least one child")
    if spec.kind in _ALLOWED:
        extra = set(spec.params) - (_ALLOWED[spec.kind] - {"name"})
        if extra:
            raise TreeStructureError(f"{here}: unknown attribute(s) {sorted(extra)}")
        for key in ("k", "ms", "n"):
            if key in spec.params:
                try:
                    value = int(spec.params[key])
                except ValueError:
                    raise TreeStructureError(f"{here}: {key}={spec.params[key]!r} is not an integer") from None
                if value < (1 if key != "n" else 0):
                    raise TreeStructureError(f"{here}: {key}={value} out of range")
        required = _REQUIRED_INT.get(spec.kind)
        if required and required not in spec.params:
            raise TreeStructureError(f"{here}: missing required attribute {required!r}")
        if spec.kind == "Parallel" and int(spec.params["k"]) > n:
            raise TreeStructureError(f"{here}: k={spec.params['k']} exceeds child count {n}")
    for child in spec.children:
        validate(child, here)


def _from_element(el: ET.Element) -> NodeSpec:
    kind = el.tag
    if kind not in NODE_KINDS:
        raise TreeStructureError(f"unknown element <{kind}>")
    if (el.text or "").strip():
        raise TreeStructureError(f"<{kind}> must not contain text")
    attrs = dict(el.attrib)
    if kind in LEAF_KINDS:
        if "name" not in attrs:
            raise TreeStructureError(f"<{kind}> requires a name attribute")
        name = attrs.pop("name")
    else:
        name = attrs.pop("name", kind)
    children = []
    for child in el:
        if (child.tail or "").strip():
            raise TreeStructureError(f"stray text after <{child.tag}>")
        children.append(_from_element(child))
    return NodeSpec(kind, name, attrs, children)


def parse_tree(xml_text: str | bytes) -> TreeDefinition:
    try:
        doc = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise TreeParseError(f"malformed tree XML: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from None
    if doc.tag != "BehaviorTree":
        raise TreeStructureError(f"root element must be <BehaviorTree>, got <{doc.tag}>")
    if doc.attrib:
        raise TreeStructureError(f"<BehaviorTree> takes no attributes, got {sorted(doc.attrib)}")
    children = list(doc)
    if len(children) != 1:
        raise TreeStructureError(f"<BehaviorTree> must contain exactly one root node, got {len(children)}")
    root = _from_element(children[0])
    validate(root)
    return TreeDefinition(root)


def load_tree(path) -> TreeDefinition:
    with open(path, "rb") as fh:
        return parse_tree(fh.read())
