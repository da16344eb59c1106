"""Acceptance criteria, one test each.

Every test records a one-line PASS/FAIL verdict; the lines are repeated in the
terminal summary.  The full-resolution Hartmann run takes tens of minutes and
only runs with CNLF_MHD_FULL_HARTMANN=1.
"""

import os

import pytest

from cnlf_mhd import acceptance

VERDICTS = []


def _record(crit):
    line = crit.line()
    VERDICTS.append(line)
    print(line)
    return crit


@pytest.fixture(scope="module")
def table1():
    return acceptance.table1_study()


def test_1_skew_symmetry():
    crit = _record(acceptance.check_skew_symmetry())
    assert crit.passed, crit.detail
    assert crit.seconds < 5


def test_2_lorentz_induction_compatibility():
    crit = _record(acceptance.check_lorentz_induction())
    assert crit.passed, crit.detail
    assert crit.seconds < 5


def test_3_forcing_oracles():
    crit = _record(acceptance.check_forcing_oracle())
    assert crit.passed, crit.detail
    assert crit.seconds < 5


@pytest.mark.slow
def test_4_unit_parameter_convergence(table1):
    crit = _record(acceptance.check_table1(table1))
    assert crit.passed, crit.detail


@pytest.mark.slow
def test_5_stiff_regimes():
    crit = _record(acceptance.check_stiff_regimes())
    assert crit.passed, crit.detail


@pytest.mark.slow
def test_6_hartmann_half_resolution():
    crit = _record(acceptance.check_hartmann(n=12, tolerance=0.03, budget=300.0))
    assert crit.passed, crit.detail


@pytest.mark.slow
@pytest.mark.full_hartmann
@pytest.mark.skipif(os.environ.get("CNLF_MHD_FULL_HARTMANN") != "1",
                    reason="full-resolution Hartmann run; set CNLF_MHD_FULL_HARTMANN=1")
def test_6_hartmann_full_resolution():
    crit = _record(acceptance.check_hartmann(n=24, tolerance=0.01, budget=None, T=400.0))
    assert crit.passed, crit.detail


def test_7_null_preservation():
    crit = _record(acceptance.check_null_preservation())
    assert crit.passed, crit.detail


@pytest.mark.slow
def test_8_discrete_incompressibility(table1):
    crit = _record(acceptance.check_incompressibility(table1))
    assert crit.passed, crit.detail
