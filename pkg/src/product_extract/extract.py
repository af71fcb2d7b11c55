"""schema.org Product extraction from HTML (JSON-LD and microdata).

The pipeline is: collect typed nodes from every JSON-LD block and every
microdata item scope, keep the ``Product`` nodes, then pick one. JSON-LD
always wins over microdata when it yields a Product with a usable name.
"""

import html as htmllib
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
from urllib.parse import urlparse

from bs4 import BeautifulSoup, Tag

from .errors import EmptyName, NoProductFound

log = logging.getLogger(__name__)

MAX_DESCRIPTION_CHARS = 10_000
PARSER = "lxml"

JSON_LD = "JsonLd"
MICRODATA = "Microdata"

_WS = re.compile(r"\s+")
_TAG = re.compile(r"<[^>]*>")

# HTML microdata value rules: element name -> attribute holding the value
_URL_ATTRS = {
    "a": "href", "area": "href", "link": "href",
    "audio": "src", "embed": "src", "iframe": "src", "img": "src",
    "source": "src", "track": "src", "video": "src",
    "object": "data",
    "data": "value", "meter": "value",
}


@dataclass
class SchemaNode:
    node_type: str
    properties: Dict[str, List[str]] = field(default_factory=dict)

    def add(self, prop: str, value: str) -> None:
        self.properties.setdefault(prop, []).append(value)

    def populated(self) -> int:
        return sum(1 for values in self.properties.values() if any(v.strip() for v in values))


@dataclass(frozen=True)
class ProductInfo:
    name: str
    description: str
    syntax: str
    candidate_count: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "syntax": self.syntax,
            "candidate_count": self.candidate_count,
        }


def _soup(html: str) -> BeautifulSoup:
    return BeautifulSoup(html, PARSER)


def _type_leaf(value: str) -> str:
    value = value.strip().rstrip("/")
    for sep in ("/", "#", ":"):
        if sep in value:
            value = value.rsplit(sep, 1)[-1]
    return value


def normalize_text(text: str) -> str:
    return _WS.sub(" ", text).strip()


# -- JSON-LD ------------------------------------------------------------

def _scalar_text(value) -> Optional[str]:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (str, int, float)):
        return str(value)
    if isinstance(value, dict) and "@value" in value:
        return _scalar_text(value["@value"])
    return None


def _walk_json_ld(obj, out: List[SchemaNode]) -> None:
    if isinstance(obj, list):
        for item in obj:
            _walk_json_ld(item, out)
        return
    if not isinstance(obj, dict):
        return

    raw_type = obj.get("@type")
    types = raw_type if isinstance(raw_type, list) else [raw_type]
    types = [_type_leaf(t) for t in types if isinstance(t, str) and _type_leaf(t)]

    props: Dict[str, List[str]] = {}
    nested = []
    for key, value in obj.items():
        if key == "@graph":
            nested.append(value)
            continue
        if key.startswith("@"):
            continue
        values = value if isinstance(value, list) else [value]
        for v in values:
            text = _scalar_text(v)
            if text is not None:
                props.setdefault(key, []).append(text)
            else:
                nested.append(v)

    for t in types:
        out.append(SchemaNode(t, {k: list(v) for k, v in props.items()}))
    for child in nested:
        _walk_json_ld(child, out)


def _is_json_ld_script(tag: Tag) -> bool:
    kind = tag.get("type")
    if not isinstance(kind, str):
        return False
    return kind.split(";", 1)[0].strip().lower() == "application/ld+json"


def _strip_wrappers(text: str) -> str:
    text = text.strip()
    for start, end in (("<!--", "-->"), ("<![CDATA[", "]]>"), ("//<![CDATA[", "//]]>")):
        if text.startswith(start) and text.endswith(end):
            text = text[len(start):-len(end)].strip()
    return text


def _json_ld_nodes(soup: BeautifulSoup, warnings: Optional[list]) -> List[SchemaNode]:
    nodes: List[SchemaNode] = []
    for i, script in enumerate(soup.find_all("script")):
        if not _is_json_ld_script(script):
            continue
        raw = _strip_wrappers(script.get_text())
        try:
            data = json.loads(raw, strict=False)
        except (ValueError, RecursionError) as exc:
            msg = f"skipping malformed JSON-LD block #{i}: {exc}"
            log.debug(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        try:
            _walk_json_ld(data, nodes)
        except RecursionError:
            if warnings is not None:
                warnings.append(f"skipping over-nested JSON-LD block #{i}")
    return nodes


def extract_json_ld(html: str, warnings: Optional[list] = None) -> List[SchemaNode]:
    """Return one node per schema.org-typed object in the page's JSON-LD.

    Malformed blocks are skipped; a message for each is appended to
    ``warnings`` when a list is given.
    """
    return _json_ld_nodes(_soup(html), warnings)


# -- microdata ----------------------------------------------------------

def _schema_org_type(itemtype) -> Optional[str]:
    if not isinstance(itemtype, str):
        return None
    for url in itemtype.split():
        parsed = urlparse(url)
        if parsed.scheme not in ("http", "https"):
            continue
        host = parsed.netloc.lower()
        if host != "schema.org" and not host.endswith(".schema.org"):
            continue
        leaf = parsed.path.strip("/").rsplit("/", 1)[-1]
        if leaf:
            return leaf
    return None


def _itemprop_value(el: Tag) -> str:
    content = el.get("content")
    if isinstance(content, str):
        return content
    attr = _URL_ATTRS.get(el.name)
    if attr is not None:
        value = el.get(attr)
        if isinstance(value, str):
            return value
    if el.name == "time" and isinstance(el.get("datetime"), str):
        return el["datetime"]
    return el.get_text(" ")


def _collect_props(scope: Tag, node: Optional[SchemaNode]) -> None:
    # Iterative walk; a nested itemscope is a boundary whose own itemprop
    # names the nested item, so it contributes no text to the outer node.
    stack = list(reversed([c for c in scope.children if isinstance(c, Tag)]))
    while stack:
        el = stack.pop()
        is_scope = el.has_attr("itemscope")
        if el.has_attr("itemprop") and not is_scope and node is not None:
            names = el.get("itemprop")
            names = names if isinstance(names, list) else str(names).split()
            value = _itemprop_value(el)
            for name in names:
                node.add(name, value)
        if is_scope:
            continue
        stack.extend(reversed([c for c in el.children if isinstance(c, Tag)]))


def _microdata_nodes(soup: BeautifulSoup) -> List[SchemaNode]:
    nodes: List[SchemaNode] = []
    for el in soup.find_all(attrs={"itemscope": True}):
        node_type = _schema_org_type(el.get("itemtype"))
        if node_type is None:
            continue
        node = SchemaNode(node_type)
        _collect_props(el, node)
        nodes.append(node)
    return nodes


def extract_microdata(html: str) -> List[SchemaNode]:
    """Return one node per schema.org ``itemscope`` element, in document order."""
    return _microdata_nodes(_soup(html))


# -- selection ----------------------------------------------------------

def _clean_name(value: str, raw: bool) -> str:
    if raw:
        value = htmllib.unescape(value)
    return normalize_text(value)


def _clean_description(value: str, raw: bool) -> str:
    # microdata text content is already entity-decoded and markup-free
    if raw:
        value = htmllib.unescape(_TAG.sub(" ", htmllib.unescape(value)))
    text = normalize_text(value)
    return text[:MAX_DESCRIPTION_CHARS]


def _usable_name(node: SchemaNode, raw: bool) -> str:
    for value in node.properties.get("name", []):
        name = _clean_name(value, raw)
        if name:
            return name
    return ""


def _pick(nodes: List[SchemaNode], raw: bool) -> Optional[Tuple[SchemaNode, str]]:
    best = None
    for node in nodes:
        name = _usable_name(node, raw)
        if not name:
            continue
        # strictly greater keeps the first node on ties
        if best is None or node.populated() > best[0].populated():
            best = (node, name)
    return best


def extract_product(html: str) -> ProductInfo:
    soup = _soup(html)
    json_products = [n for n in _json_ld_nodes(soup, None) if n.node_type == "Product"]
    micro_products = [n for n in _microdata_nodes(soup) if n.node_type == "Product"]
    count = len(json_products) + len(micro_products)
    if count == 0:
        raise NoProductFound("no schema.org Product found")

    # JSON-LD strings are raw JSON, so entities are still encoded; the
    # tree builder has already decoded microdata text.
    for syntax, nodes, raw in ((JSON_LD, json_products, True), (MICRODATA, micro_products, False)):
        picked = _pick(nodes, raw)
        if picked is None:
            continue
        node, name = picked
        desc = ""
        for value in node.properties.get("description", []):
            desc = _clean_description(value, raw)
            if desc:
                break
        return ProductInfo(name=name, description=desc, syntax=syntax, candidate_count=count)
    raise EmptyName(f"{count} Product node(s) found but none has a usable name")


def product_to_json(info: ProductInfo) -> str:
    """Canonical JSON used by the CLI and the golden fixtures."""
    return json.dumps(info.to_dict(), ensure_ascii=False, indent=2) + "\n"


def error_to_json(code: str) -> str:
    return json.dumps({"error": code}, ensure_ascii=False, indent=2) + "\n"
