from pathlib import Path

import pytest

from mmrope.stream import Image, Role, Text, TokenStream

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def doc_stream():
    """Text(4) + Image(100x100) + Generated(50): the high-resolution document case."""
    return TokenStream((Text(4), Image(100, 100), Text(50, Role.GENERATED)))


@pytest.fixture
def fixtures_dir():
    return FIXTURES
