"""Acceptance criteria: one PASS/FAIL line per criterion, then one test per criterion.

The full ``verify`` run (including the thread-count determinism check) is
executed once per module; it takes a few minutes.
"""

import json

import pytest

from fiberdis.acceptance import CRITERIA, artifact_name, verify

NUMBERS = [c[0] for c in CRITERIA] + [12]


@pytest.fixture(scope="module")
def results(request, tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    capture = request.config.pluginmanager.getplugin("capturemanager")
    with capture.global_and_fixture_disabled():
        print()
        res, ok = verify(seed=0, out_dir=str(out), progress=lambda r: print(r.line(), flush=True))
        print(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in res)}/{len(res)} criteria passed")
    return {r.number: r for r in res}, out


@pytest.mark.parametrize("number", NUMBERS)
def test_criterion(results, number):
    by_number, out = results
    r = by_number[number]
    artifact = json.loads((out / artifact_name(number)).read_text())
    assert artifact["passed"] == r.passed
    assert r.passed, f"criterion {number} ({r.name}) failed: {r.detail}"


def test_summary_lists_every_criterion(results):
    _, out = results
    summary = json.loads((out / "summary.json").read_text())
    assert [c["criterion"] for c in summary["criteria"]] == NUMBERS
    assert summary["passed"] is True
