"""Fixed-point amount arithmetic and unit conversion."""

from __future__ import annotations

import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oiaudit.model import (
    Amount,
    Unit,
    UnitMismatchError,
    convert,
    sum_amounts,
)


def test_construction_from_decimal_rounds_half_even():
    assert Amount.from_decimal(Decimal("1.234567895"), Unit.USD).quanta == 123456790
    # ties to even
    assert Amount.from_decimal(Decimal("0.000000005"), Unit.USD).quanta == 0
    assert Amount.from_decimal(Decimal("0.000000015"), Unit.USD).quanta == 2


def test_negative_amount_rejected():
    with pytest.raises(ValueError):
        Amount(-1, Unit.USD)
    with pytest.raises(ValueError):
        Amount.from_decimal(Decimal("-0.5"), Unit.BASE_COIN)


def test_cross_unit_arithmetic_rejected():
    a = Amount.from_decimal("1", Unit.USD)
    b = Amount.from_decimal("1", Unit.BASE_COIN)
    with pytest.raises(UnitMismatchError):
        a + b
    with pytest.raises(UnitMismatchError):
        a - b
    with pytest.raises(UnitMismatchError):
        a < b
    with pytest.raises(UnitMismatchError):
        a.abs_diff(b)


def test_subtraction_below_zero_is_a_bug():
    with pytest.raises(ValueError):
        Amount(1, Unit.USD) - Amount(2, Unit.USD)
    assert Amount(1, Unit.USD).saturating_sub(Amount(2, Unit.USD)).quanta == 0


def test_exact_addition():
    a = Amount.from_decimal("0.1", Unit.USD)
    b = Amount.from_decimal("0.2", Unit.USD)
    assert (a + b).value == Decimal("0.3")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10**20), max_size=50),
       st.randoms(use_true_random=False))
def test_sum_is_permutation_invariant(quanta, rnd):
    amounts = [Amount(q, Unit.USD) for q in quanta]
    total = sum_amounts(amounts, Unit.USD)
    shuffled = list(amounts)
    rnd.shuffle(shuffled)
    assert sum_amounts(shuffled, Unit.USD) == total
    assert total.quanta == sum(quanta)


# Conversion figures cross-checked against published period reports at the
# period-average prices of $20,625 and $28,250 per coin.
def test_convert_base_to_usd_reference_rows():
    got = convert(Amount.from_decimal("2213583", Unit.BASE_COIN),
                  Decimal("20625"), Unit.USD)
    assert got.value == Decimal("45655149375")

    got = convert(Amount.from_decimal("25895", Unit.BASE_COIN),
                  Decimal("20625"), Unit.USD)
    assert got.value == Decimal("534084375")


def test_convert_zero():
    got = convert(Amount.zero(Unit.BASE_COIN), Decimal("28250"), Unit.USD)
    assert got.is_zero


def test_convert_same_unit_rejected():
    with pytest.raises(UnitMismatchError):
        convert(Amount.from_decimal("1", Unit.USD), Decimal("20000"), Unit.USD)


def test_convert_bad_price_rejected():
    with pytest.raises(ValueError):
        convert(Amount.from_decimal("1", Unit.USD), Decimal("0"), Unit.BASE_COIN)


@settings(max_examples=300, deadline=None)
@given(
    st.integers(min_value=0, max_value=10**19),
    st.decimals(min_value="1", max_value="1000000", places=2,
                allow_nan=False, allow_infinity=False),
)
def test_convert_round_trip_within_one_quantum(quanta, price):
    # the one-quantum bound needs price >= 1: below that the intermediate
    # rounding error is amplified by the division on the way back
    a = Amount(quanta, Unit.BASE_COIN)
    back = convert(convert(a, price, Unit.USD), price, Unit.BASE_COIN)
    assert abs(back.quanta - a.quanta) <= 1
