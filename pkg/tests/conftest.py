"""Shared fixtures for the test suite."""

from __future__ import annotations

import pytest

from graphqa import testkit


@pytest.fixture(scope="session")
def fixture_kb():
    return testkit.fixture_kb()


@pytest.fixture(scope="session")
def fixture_retriever():
    # top_k=2 matches the scripted refine indices in the transcripts
    return testkit.fixture_retriever()
