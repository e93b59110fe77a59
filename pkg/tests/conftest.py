import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from score_gen import FIG2_KERN  # noqa: E402

from kernscribe.kern import parse_kern, to_score  # noqa: E402
from kernscribe.tokens import build_vocabulary  # noqa: E402


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary()


@pytest.fixture()
def fig2_text():
    return FIG2_KERN


@pytest.fixture()
def fig2_doc():
    return parse_kern(FIG2_KERN)


@pytest.fixture()
def fig2_score():
    return to_score(parse_kern(FIG2_KERN))
