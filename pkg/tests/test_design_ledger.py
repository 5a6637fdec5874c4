import re
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
CITATION = re.compile(r"`(other_examples/[^`]+)`")


def test_cited_reference_files_exist():
    pack = ROOT / "examples"
    if not (pack / "other_examples").is_dir():
        pytest.skip("reference pack not present")
    cited = set(CITATION.findall((ROOT / "DESIGN.md").read_text(encoding="utf-8")))
    assert cited
    missing = sorted(path for path in cited if not (pack / path).exists())
    assert missing == []
