import json

import pytest
from hypothesis import given, settings, strategies as st

from product_extract.core import (
    Dataset,
    ProductRecord,
    default_taxonomy,
    load_dataset,
    load_taxonomy,
    normalize_language,
    parse_dataset,
)
from product_extract.errors import (
    DuplicateBrickCode,
    DuplicateId,
    MalformedLine,
    MalformedRow,
    MissingFile,
    UnknownCategory,
)

HEADER = "segment,family,class,brick,brick_code\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_shirts_and_shorts_share_family_not_class(tmp_path):
    p = write(tmp_path, "tax.csv", HEADER
              + "Clothing,Clothing,Upper Body Wear,Shirts,10001352\n"
              + "Clothing,Clothing,Lower Body Wear,Shorts,10001348\n")
    tax = load_taxonomy(p)
    assert len(tax) == 2
    shirts, shorts = tax.categories["10001352"], tax.categories["10001348"]
    assert shirts.family == shorts.family
    assert shirts.class_name != shorts.class_name


def test_empty_taxonomy_rejected(tmp_path):
    with pytest.raises(MalformedRow):
        load_taxonomy(write(tmp_path, "tax.csv", HEADER))


def test_duplicate_brick_code(tmp_path):
    p = write(tmp_path, "tax.csv", HEADER + "A,B,C,D,X\nA,B,C,E,X\n")
    with pytest.raises(DuplicateBrickCode) as exc:
        load_taxonomy(p)
    assert exc.value.brick_code == "X"


@pytest.mark.parametrize("body, line", [
    ("A,B,C,D\n", 2),
    ("A,B,C,D,X\nA,,C,D,Y\n", 3),
])
def test_malformed_rows_report_line(tmp_path, body, line):
    with pytest.raises(MalformedRow) as exc:
        load_taxonomy(write(tmp_path, "tax.csv", HEADER + body))
    assert exc.value.line == line


def test_bad_header(tmp_path):
    with pytest.raises(MalformedRow):
        load_taxonomy(write(tmp_path, "tax.csv", "a,b,c\nA,B,C\n"))


def test_missing_taxonomy_file(tmp_path):
    with pytest.raises(MissingFile):
        load_taxonomy(tmp_path / "nope.csv")


def test_quoted_fields(tmp_path):
    p = write(tmp_path, "tax.csv", HEADER + '"Audio Visual/Photography","Audio, Visual",TV,Televisions,42\n')
    assert load_taxonomy(p).categories["42"].family == "Audio, Visual"


def test_bundled_taxonomy_spans_six_segments():
    tax = default_taxonomy()
    assert len(tax) >= 12
    assert {c.segment for c in tax} == {
        "Clothing", "Footwear", "Personal Accessories", "Home Appliances",
        "Audio Visual/Photography", "Computing",
    }


def rec(i, category="10001352", **kw):
    obj = {"id": f"p{i}", "name": f"Item {i}", "description": "", "shop": "s", "language": "de"}
    if category is not None:
        obj["category"] = category
    obj.update(kw)
    return json.dumps(obj)


def test_three_valid_lines_in_file_order(tmp_path):
    p = write(tmp_path, "d.jsonl", "\n".join([rec(3), rec(1), rec(2)]) + "\n")
    ds = load_dataset(p, default_taxonomy())
    assert [r.id for r in ds] == ["p3", "p1", "p2"]
    assert ds.provenance == str(p)


def test_unknown_category_strict_and_lenient():
    lines = [rec(1), rec(2, category="no-such-brick"), rec(3)]
    with pytest.raises(UnknownCategory) as exc:
        parse_dataset(lines, default_taxonomy(), strict=True)
    assert exc.value.label == "no-such-brick"
    ds = parse_dataset(lines, default_taxonomy(), strict=False)
    assert [r.id for r in ds] == ["p1", "p3"]
    assert ds.dropped == 1


def test_duplicate_id():
    with pytest.raises(DuplicateId):
        parse_dataset([rec(1), rec(1)])


@pytest.mark.parametrize("line", [
    "{not json",
    "[1, 2]",
    json.dumps({"id": "a", "name": "x"}),
    json.dumps({"id": "a", "name": "  ", "description": "", "shop": "s", "language": "de"}),
])
def test_malformed_line(line):
    with pytest.raises(MalformedLine) as exc:
        parse_dataset([rec(0), line])
    assert exc.value.line == 2


def test_language_tags_normalized():
    assert normalize_language("DE-at") == "de"
    assert normalize_language("fr_FR") == "fr"
    ds = parse_dataset([rec(1, language="EN-GB")])
    assert ds[0].language == "en"


def test_strict_load_categories_resolve(tmp_path):
    tax = default_taxonomy()
    lines = [rec(i, category=code) for i, code in enumerate(tax.codes)]
    ds = parse_dataset(lines, tax)
    assert all(r.category in tax.categories for r in ds)


def test_round_trip_preserves_extras_and_order():
    lines = [
        rec(1, source_category="kleider", extras_field={"a": [1, 2]}),
        rec(2, category=None),
        rec(3, url="https://x"),
    ]
    ds = parse_dataset(lines)
    assert ds.to_jsonl().splitlines() == lines


_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(_text.filter(lambda s: s.strip()), _text, st.sampled_from(["de", "fr", "en"]),
                          st.one_of(st.none(), st.sampled_from(default_taxonomy().codes)),
                          st.one_of(st.none(), _text)), max_size=8))
def test_round_trip_property(rows):
    records = [ProductRecord(f"id{i}", name, desc, "shop", lang, cat, src)
               for i, (name, desc, lang, cat, src) in enumerate(rows)]
    text = Dataset(tuple(records)).to_jsonl()
    again = parse_dataset(text.split("\n"), default_taxonomy())
    assert again.to_jsonl() == text
    assert list(again.records) == records
