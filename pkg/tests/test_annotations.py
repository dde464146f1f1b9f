import random
import xml.etree.ElementTree as ET

import pytest

from bitetiming.annotations import (AnnotationEvent as Ev, eaf_to_events, parse_annotations,
                                    parse_annotations_text, serialize_annotations, validate_session,
                                    write_annotations)
from bitetiming.errors import IllegalValueForKind, MalformedRow, NonPositiveDuration
from conftest import lift, make_session, to_mouth

HEADER = "session_id,seat,kind,value,start_ms,end_ms\n"


def test_row_maps_to_event():
    s = parse_annotations_text(HEADER + "S01,2,food_lifted,fork,100400,100800\n")
    assert s.session_id == "S01"
    assert s.events[2] == (Ev("food_lifted", "fork", 100400, 100800),)
    assert s.events[1] == () and s.events[3] == ()


def test_drink_with_fork_is_illegal():
    with pytest.raises(IllegalValueForKind, match="line 2"):
        parse_annotations_text(HEADER + "S01,1,drink_lifted,fork,0,400\n")


@pytest.mark.parametrize("row,line", [
    ("S01,1,food_lifted,fork,100\n", 2),
    ("S01,x,food_lifted,fork,0,400\n", 2),
    ("S01,4,food_lifted,fork,0,400\n", 2),
    ("S01,1,eating,fork,0,400\n", 2),
])
def test_malformed_rows_report_line(row, line):
    with pytest.raises(MalformedRow) as err:
        parse_annotations_text(HEADER + row)
    assert err.value.line == line


def test_missing_header():
    with pytest.raises(MalformedRow):
        parse_annotations_text("S01,1,food_lifted,fork,0,400\n")


def test_non_positive_duration():
    with pytest.raises(NonPositiveDuration):
        parse_annotations_text(HEADER + "S01,1,food_to_mouth,fork,500,500\n")
    with pytest.raises(NonPositiveDuration):
        Ev("mouth_open", "none", 10, 5)


def test_empty_file(tmp_path):
    p = tmp_path / "S09.csv"
    p.write_text("")
    s = parse_annotations(p)
    assert s.n_events == 0 and s.session_id == "S09"
    assert validate_session(s).rules() == ["no_events"]


def test_round_trip(syn7, tmp_path):
    ann, _ = syn7
    assert parse_annotations_text(serialize_annotations(ann)) == ann
    assert parse_annotations(write_annotations(ann, tmp_path / "a.csv")) == ann


def test_shuffled_rows_parse_identically(syn7):
    ann, _ = syn7
    lines = serialize_annotations(ann).splitlines(keepends=True)
    meta = [l for l in lines if l.startswith("#")]
    body = lines[len(meta) + 1:]
    random.Random(3).shuffle(body)
    assert parse_annotations_text("".join(meta) + HEADER + "".join(body)) == ann


def test_clean_pairing():
    s = make_session({1: [lift(48_000), to_mouth(50_000)]})
    assert validate_session(s).empty


def test_duplicate_lift():
    s = make_session({1: [lift(40_000), lift(45_000), to_mouth(50_000)]})
    assert validate_session(s).rules() == ["duplicate_lift"]


def test_first_handover_without_lift_is_tolerated():
    s = make_session({1: [to_mouth(5_000), lift(20_000), to_mouth(22_000)]})
    assert validate_session(s).empty


def test_later_handover_without_lift_is_flagged():
    s = make_session({1: [lift(20_000), to_mouth(22_000), to_mouth(40_000)]})
    assert validate_session(s).rules() == ["missing_lift"]


def test_handover_after_disruption_is_tolerated():
    s = make_session({1: [lift(20_000), to_mouth(22_000),
                          Ev("disruption", "light_off", 30_000, 35_000), to_mouth(40_000)]})
    assert validate_session(s).empty


def test_other_rules():
    s = make_session({2: [Ev("food_entered", "fork", 1_000, 2_000),
                          Ev("disruption", "participant_left", 10_000, 20_000),
                          lift(15_000), to_mouth(590_000, dur=20_000)]})
    rules = set(validate_session(s).rules())
    assert {"fixed_length_exceeded", "during_disruption", "beyond_session"} <= rules


def test_mouth_open_without_handover():
    s = make_session({1: [Ev("mouth_open", "none", 1_000, 2_000),
                          Ev("mouth_open", "none", 10_000, 11_000),
                          lift(20_000), to_mouth(21_000)]})
    assert validate_session(s).rules() == ["mouth_open_without_handover"]


def test_eaf_conversion(tmp_path):
    doc = ET.Element("ANNOTATION_DOCUMENT")
    order = ET.SubElement(doc, "TIME_ORDER")
    for i, t in enumerate([1000, 1400, 2000, 2900]):
        ET.SubElement(order, "TIME_SLOT", TIME_SLOT_ID=f"ts{i}", TIME_VALUE=str(t))
    for tier_id, (a, b), text in (("food_lifted", (0, 1), "Fork"), ("food_to_mouth", (2, 3), "fork"),
                                  ("comments", (0, 3), "ignored")):
        tier = ET.SubElement(doc, "TIER", TIER_ID=tier_id)
        ann = ET.SubElement(ET.SubElement(tier, "ANNOTATION"), "ALIGNABLE_ANNOTATION",
                            TIME_SLOT_REF1=f"ts{a}", TIME_SLOT_REF2=f"ts{b}")
        ET.SubElement(ann, "ANNOTATION_VALUE").text = text
    p = tmp_path / "x.eaf"
    ET.ElementTree(doc).write(p)
    assert eaf_to_events(p) == [Ev("food_lifted", "fork", 1000, 1400),
                                Ev("food_to_mouth", "fork", 2000, 2900)]
