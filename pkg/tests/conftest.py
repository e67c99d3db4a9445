# tests/conftest.py

import json
from pathlib import Path

import pytest

from expnote.llm_backends import ScriptEntry, ScriptedBackend
from expnote.protocol import load_bundle

REPO_ROOT = Path(__file__).resolve().parents[1]
GOLDEN_DIR = Path(__file__).parent / "fixtures" / "golden"
LETS_BUNDLE_DIR = REPO_ROOT / "prompts" / "lets"


@pytest.fixture
def lets_bundle():
    return load_bundle(str(LETS_BUNDLE_DIR))


@pytest.fixture
def golden():
    with open(GOLDEN_DIR / "golden.json", 'r', encoding='utf-8') as f:
        return json.load(f)


def scripted(*pairs, once=False):
    """A scripted backend from (matcher, reply) pairs."""
    return ScriptedBackend([ScriptEntry(matcher=m, reply=r, consume_once=once) for m, r in pairs])


class SpyBackend(ScriptedBackend):
    """Scripted backend that keeps every request it served."""

    def __init__(self, entries):
        super().__init__(entries)
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        return super().complete(request)
