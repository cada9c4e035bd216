import io
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wetlm.index import DirectIndex, ingest_trec  # noqa: E402

TINY_TREC = b"""<DOC>
<DOCNO> d1 </DOCNO>
a b a
</DOC>
<DOC>
<DOCNO>d2</DOCNO>
<TEXT>b c</TEXT>
</DOC>
"""


@pytest.fixture
def tiny() -> DirectIndex:
    """Two documents, "a b a" and "b c": collection counts {a:2, b:2, c:1}."""
    return ingest_trec(io.BytesIO(TINY_TREC))


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)
