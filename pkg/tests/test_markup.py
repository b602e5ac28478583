import random

import pytest

from gritkit.locgrid import GridSpec, TokenBoxPair
from gritkit.markup import (
    BAD_PAIR,
    BOX_WITHOUT_SPAN,
    EMPTY_BOX,
    EMPTY_SPAN,
    ODD_LOC_COUNT,
    PAIR_ORDER,
    SPAN_WITHOUT_BOX,
    TOKEN_OUT_OF_RANGE,
    TRAILING_CONTENT,
    UNCLOSED_BOX,
    UNCLOSED_IMAGE,
    UNCLOSED_SPAN,
    UNKNOWN_TOKEN,
    DecodeFailure,
    GroundLink,
    GroundedCaption,
    TextSpan,
    extract_links,
    parse,
    render_box_group,
    serialize,
)

from conftest import EXAMPLE_STRING
from genutils import mutate, random_doc

G = GridSpec(32)


def link(caption, text, pairs, occurrence=0):
    start = -1
    for _ in range(occurrence + 1):
        start = caption.index(text, start + 1)
    return GroundLink(TextSpan(start, start + len(text), text), tuple(pairs))


class TestSerialize:
    def test_worked_example_exact_bytes(self):
        caption = "It seats next to a campfire"
        doc = GroundedCaption(
            caption=caption,
            links=(
                link(caption, "It", [TokenBoxPair(44, 863)]),
                link(caption, "a campfire", [TokenBoxPair(4, 1007)]),
            ),
            has_grounding_marker=True,
            has_image_slot=True,
        )
        assert serialize(doc, G) == EXAMPLE_STRING

    def test_zero_links_with_marker(self):
        doc = GroundedCaption("just a caption", (), has_grounding_marker=True)
        assert serialize(doc, G) == "<grounding> just a caption"

    def test_multi_box_group(self):
        caption = "two dogs"
        doc = GroundedCaption(
            caption,
            (link(caption, "two dogs", [TokenBoxPair(0, 33), TokenBoxPair(66, 99)]),),
        )
        assert serialize(doc, G) == (
            "<p> two dogs </p><box><loc_0><loc_33><delim><loc_66><loc_99></box>"
        )

    def test_rejects_out_of_range_token(self):
        caption = "a dog"
        doc = GroundedCaption(caption, (link(caption, "a dog", [TokenBoxPair(0, 1024)]),))
        with pytest.raises(ValueError):
            serialize(doc, G)

    def test_rejects_markup_in_caption(self):
        doc = GroundedCaption("a <box> in text", ())
        with pytest.raises(ValueError):
            serialize(doc, G)
        doc = GroundedCaption("a <weird> tag", ())
        with pytest.raises(ValueError):
            serialize(doc, G)

    def test_plain_angle_brackets_are_fine(self):
        doc = GroundedCaption("1 < 2 and 3 > 2", ())
        assert serialize(doc, G) == "1 < 2 and 3 > 2"

    def test_rejects_overlapping_links(self):
        caption = "a big dog"
        doc = GroundedCaption(
            caption,
            (
                GroundLink(TextSpan(0, 5, "a big"), (TokenBoxPair(0, 0),)),
                GroundLink(TextSpan(2, 9, "big dog"), (TokenBoxPair(0, 0),)),
            ),
        )
        with pytest.raises(ValueError):
            serialize(doc, G)

    def test_rejects_span_text_mismatch(self):
        doc = GroundedCaption("a dog", (GroundLink(TextSpan(0, 5, "a cat"), (TokenBoxPair(0, 0),)),))
        with pytest.raises(ValueError):
            serialize(doc, G)


class TestParse:
    def test_worked_example(self):
        doc = parse(EXAMPLE_STRING, G)
        assert isinstance(doc, GroundedCaption)
        assert doc.caption == "It seats next to a campfire"
        assert doc.has_grounding_marker and doc.has_image_slot
        assert len(doc.links) == 2
        assert doc.links[0].span.text == "It"
        assert doc.links[0].boxes == (TokenBoxPair(44, 863),)
        assert doc.links[1].span.text == "a campfire"
        assert doc.links[1].boxes == (TokenBoxPair(4, 1007),)
        assert serialize(doc, G) == EXAMPLE_STRING

    def test_plain_text(self):
        doc = parse("just some plain text", G)
        assert doc == GroundedCaption("just some plain text", ())

    def test_odd_loc_count(self):
        got = parse("<p> a dog </p><box><loc_1></box>", G)
        assert isinstance(got, DecodeFailure)
        assert got.reason == ODD_LOC_COUNT

    @pytest.mark.parametrize(
        "text,reason",
        [
            ("<p> a dog </p><box><loc_1><loc_2><loc_3></box>", ODD_LOC_COUNT),
            ("<p> a </p><box><loc_1><loc_2><loc_3><loc_33></box>", BAD_PAIR),
            ("<p> a </p><box></box>", EMPTY_BOX),
            ("<p> a </p><box><delim><loc_1><loc_33></box>", EMPTY_BOX),
            ("<p> a </p><box><loc_1><loc_2000></box>", TOKEN_OUT_OF_RANGE),
            ("<p> a </p><box><loc_33><loc_1></box>", PAIR_ORDER),
            ("<p> a </p><box><loc_1><loc_33>", UNCLOSED_BOX),
            ("<p> a dog", UNCLOSED_SPAN),
            ("<p> a </p> trailing words", SPAN_WITHOUT_BOX),
            ("<box><loc_1><loc_33></box>", BOX_WITHOUT_SPAN),
            ("a <weird> token", UNKNOWN_TOKEN),
            ("<p>  </p><box><loc_1><loc_33></box>", EMPTY_SPAN),
            ("<image> no closing", UNCLOSED_IMAGE),
            ("text </s> more text", TRAILING_CONTENT),
            ("a stray <delim> here", "misplaced_token"),
            ("a stray </p> here", "misplaced_token"),
        ],
    )
    def test_failures(self, text, reason):
        got = parse(text, G)
        assert isinstance(got, DecodeFailure), text
        assert got.reason == reason

    def test_failure_position_points_at_offender(self):
        text = "<p> a dog </p><box><loc_9999><loc_1></box>"
        got = parse(text, G)
        assert isinstance(got, DecodeFailure)
        assert text[got.position :].startswith("<loc_9999>")

    def test_tolerates_whitespace_between_markup(self):
        doc = parse("<p> a dog </p> <box> <loc_1> <loc_33> </box>", G)
        assert isinstance(doc, GroundedCaption)
        assert doc.links[0].boxes == (TokenBoxPair(1, 33),)
        assert doc.caption == "a dog"

    def test_image_payload_preserved(self):
        doc = parse("<s> <image> BLOB </image> <grounding> hi </s>", G)
        assert isinstance(doc, GroundedCaption)
        assert doc.image_payload == "BLOB"
        assert doc.caption == "hi"
        assert serialize(doc, G) == "<s> <image> BLOB </image> <grounding> hi </s>"

    def test_multiple_pairs_roundtrip(self):
        text = "<p> dogs </p><box><loc_1><loc_33><delim><loc_2><loc_66></box>"
        doc = parse(text, G)
        assert isinstance(doc, GroundedCaption)
        assert doc.links[0].boxes == (TokenBoxPair(1, 33), TokenBoxPair(2, 66))
        assert serialize(doc, G) == text

    def test_grounding_marker_only(self):
        doc = parse("<grounding> a plain caption", G)
        assert doc == GroundedCaption(
            "a plain caption", (), has_grounding_marker=True, has_image_slot=False
        )


class TestExtractLinks:
    def test_strict_subset_matches_parse(self):
        links, failed = extract_links(EXAMPLE_STRING, G)
        assert not failed
        doc = parse(EXAMPLE_STRING, G)
        assert [l.boxes for l in links] == [l.boxes for l in doc.links]
        assert [l.span.text for l in links] == [l.span.text for l in doc.links]

    def test_anonymous_link_from_garbage(self):
        links, failed = extract_links("garbage <box><loc_5><loc_70></box> garbage", G)
        assert not failed
        assert len(links) == 1
        assert links[0].span is None
        assert links[0].boxes == (TokenBoxPair(5, 70),)

    def test_malformed_group_skipped_and_flagged(self):
        links, failed = extract_links("<box><loc_9></box> <box><loc_2><loc_40></box>", G)
        assert failed
        assert len(links) == 1
        assert links[0].boxes == (TokenBoxPair(2, 40),)

    def test_empty_output(self):
        assert extract_links("", G) == ([], False)
        assert extract_links("no markup at all", G) == ([], False)

    def test_span_offsets_index_into_raw_text(self):
        text = "so <p> the dog </p> <box><loc_1><loc_33></box> done"
        links, failed = extract_links(text, G)
        assert not failed
        span = links[0].span
        assert text[span.start : span.end] == span.text == "the dog"

    def test_unclosed_group_flags_failure(self):
        links, failed = extract_links("<box><loc_1><loc_33>", G)
        assert failed and links == []


class TestRoundTrip:
    def test_random_documents(self):
        rng = random.Random(42)
        for _ in range(300):
            doc = random_doc(rng, G)
            text = serialize(doc, G)
            again = parse(text, G)
            assert again == doc, text
            # Canonical fixpoint in the other direction.
            assert serialize(again, G) == text

    def test_caption_reconstruction(self):
        rng = random.Random(43)
        for _ in range(100):
            doc = random_doc(rng, G)
            parsed = parse(serialize(doc, G), G)
            rebuilt = []
            pos = 0
            for l in parsed.links:
                rebuilt.append(parsed.caption[pos : l.span.start])
                rebuilt.append(l.span.text)
                pos = l.span.end
            rebuilt.append(parsed.caption[pos:])
            assert "".join(rebuilt) == doc.caption

    def test_strict_accept_implies_lenient_agreement(self):
        rng = random.Random(44)
        for _ in range(100):
            doc = random_doc(rng, G)
            text = serialize(doc, G)
            links, failed = extract_links(text, G)
            assert not failed
            assert [l.boxes for l in links] == [l.boxes for l in doc.links]

    def test_mutations_never_silently_accepted(self):
        rng = random.Random(45)
        done = 0
        while done < 300:
            doc = random_doc(rng, G)
            got = mutate(rng, serialize(doc, G), G)
            if got is None:
                continue
            mutated, kind = got
            strict = parse(mutated, G)
            _, failed = extract_links(mutated, G)
            assert isinstance(strict, DecodeFailure) or failed, (kind, mutated)
            done += 1


class TestRenderBoxGroup:
    def test_single_pair(self):
        assert render_box_group([TokenBoxPair(44, 863)], G) == "<box><loc_44><loc_863></box>"

    def test_rejects_empty_and_invalid(self):
        with pytest.raises(ValueError):
            render_box_group([], G)
        with pytest.raises(ValueError):
            render_box_group([TokenBoxPair(33, 1)], G)
