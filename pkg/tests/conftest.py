import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gritkit.locgrid import GridSpec, ImageDims
from gritkit.pipeline import NounChunk, ParseDoc, ParseToken

FIXTURES = Path(__file__).parent / "fixtures"

# The worked input-representation example: a caption with two grounded spans,
# image slot and grounding marker present, payload empty.
EXAMPLE_STRING = (
    "<s> <image> </image> <grounding> "
    "<p> It </p><box><loc_44><loc_863></box> seats next to "
    "<p> a campfire </p><box><loc_4><loc_1007></box> </s>"
)


@pytest.fixture
def grid():
    return GridSpec(32)


@pytest.fixture
def dims224():
    return ImageDims(224, 224)


def dog_field_flowers_doc(image_id="fig2", width=224, height=224) -> ParseDoc:
    """The worked pipeline example: 'a dog in a field of flowers'.

    Dependency arcs: det(dog, a), prep(dog, in), pobj(in, field),
    det(field, a), prep(field, of), pobj(of, flowers); chunks are
    'a dog', 'a field', 'flowers'.
    """
    tokens = [
        ParseToken("a", 1, "det"),
        ParseToken("dog", 1, "ROOT"),
        ParseToken("in", 1, "prep"),
        ParseToken("a", 4, "det"),
        ParseToken("field", 2, "pobj"),
        ParseToken("of", 4, "prep"),
        ParseToken("flowers", 5, "pobj"),
    ]
    chunks = [NounChunk(0, 2, 1), NounChunk(3, 5, 4), NounChunk(6, 7, 6)]
    return ParseDoc(
        image_id=image_id,
        dims=ImageDims(width, height),
        caption="a dog in a field of flowers",
        tokens=tokens,
        chunks=chunks,
    )


@pytest.fixture
def fig2_doc():
    return dog_field_flowers_doc()
