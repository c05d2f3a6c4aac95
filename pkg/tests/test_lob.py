"""Matching-engine tests: the worked single-auction example, exchange rules,
and conservation invariants."""

import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bookvol.errors import OrderError, UnknownOrderError
from bookvol.lob import (
    LimitOrder,
    MessageEvent,
    OrderBook,
    OrderClass,
    Side,
    replay,
)


def _order(oid, side, price, qty):
    return LimitOrder(oid, Side(side), price, qty)


# ----------------------------------------------------------------------
# the worked single-auction example

def _example_events():
    return [
        MessageEvent("A", Side.BUY, 34_200_000_000_000, "b1", 100.0, 10.0),
        MessageEvent("A", Side.SELL, 34_200_000_000_000, "s1", 120.0, 10.0),
        MessageEvent("A", Side.SELL, 34_200_000_000_000, "s2", 130.0, 10.0),
        MessageEvent("A", Side.BUY, 34_260_000_000_000, "b2", 125.0, 15.0),
    ]


def test_single_auction_example():
    result = replay(_example_events(), opening_price=110.0)

    assert len(result.trades) == 1
    trade = result.trades[0]
    assert (trade.price, trade.quantity) == (120.0, 10.0)
    assert (trade.maker_id, trade.taker_id) == ("s1", "b2")

    # the book after the auction, best price first
    assert result.book.book_table(Side.BUY) == {125.0: 5.0, 100.0: 10.0}
    assert result.book.book_table(Side.SELL) == {130.0: 10.0}
    assert result.book.clearing_price == 120.0


def test_single_auction_example_is_fast():
    events = _example_events()
    replay(events, opening_price=110.0)          # warm the code paths
    start = time.perf_counter()
    replay(events, opening_price=110.0)
    assert time.perf_counter() - start < 1e-3


def test_clearing_price_before_any_trade_is_opening():
    book = OrderBook(101.5)
    assert book.clearing_price == 101.5
    book.submit(_order("b", "B", 100.0, 5.0))
    assert book.clearing_price == 101.5          # no match, continuation holds


# ----------------------------------------------------------------------
# matching rules

def test_fill_executes_at_resting_price():
    book = OrderBook(100.0)
    book.submit(_order("s", "S", 101.0, 5.0))
    fills = book.submit(_order("b", "B", 103.0, 5.0))
    assert [(f.price, f.quantity) for f in fills] == [(101.0, 5.0)]


def test_time_priority_breaks_price_ties():
    book = OrderBook(100.0)
    book.submit(_order("s_first", "S", 101.0, 5.0))
    book.submit(_order("s_second", "S", 101.0, 5.0))
    fills = book.submit(_order("b", "B", 101.0, 5.0))
    assert [f.maker_id for f in fills] == ["s_first"]


def test_price_priority_beats_time():
    book = OrderBook(100.0)
    book.submit(_order("s_early_worse", "S", 102.0, 5.0))
    book.submit(_order("s_late_better", "S", 101.0, 5.0))
    fills = book.submit(_order("b", "B", 102.0, 10.0))
    assert [f.maker_id for f in fills] == ["s_late_better", "s_early_worse"]


def test_partial_fill_rests_remainder_at_own_limit():
    book = OrderBook(100.0)
    book.submit(_order("s", "S", 101.0, 4.0))
    book.submit(_order("b", "B", 105.0, 10.0))
    assert book.book_table(Side.BUY) == {105.0: 6.0}


def test_incoming_never_matches_through_its_limit():
    book = OrderBook(100.0)
    book.submit(_order("s", "S", 103.0, 5.0))
    fills = book.submit(_order("b", "B", 102.0, 5.0))
    assert fills == []
    assert book.book_table(Side.BUY) == {102.0: 5.0}
    assert book.book_table(Side.SELL) == {103.0: 5.0}


def test_cancel_returns_remaining_quantity():
    book = OrderBook(100.0)
    book.submit(_order("s", "S", 101.0, 10.0))
    book.submit(_order("b", "B", 101.0, 3.0))
    assert book.cancel("s") == 7.0
    assert book.book_table(Side.SELL) == {}


def test_cancel_unknown_id_raises():
    book = OrderBook(100.0)
    with pytest.raises(UnknownOrderError):
        book.cancel("ghost")


def test_duplicate_id_rejected():
    book = OrderBook(100.0)
    book.submit(_order("x", "B", 99.0, 1.0))
    with pytest.raises(OrderError):
        book.submit(_order("x", "B", 98.0, 1.0))


def test_nonpositive_quantity_rejected():
    book = OrderBook(100.0)
    with pytest.raises(OrderError):
        book.submit(_order("z", "B", 99.0, 0.0))


def test_classify_cross_is_strict():
    book = OrderBook(100.0)
    assert book.classify(_order("a", "B", 100.5, 1.0)) is OrderClass.CROSS
    assert book.classify(_order("b", "B", 100.0, 1.0)) is OrderClass.UNCROSS
    assert book.classify(_order("c", "S", 99.5, 1.0)) is OrderClass.CROSS
    assert book.classify(_order("d", "S", 100.0, 1.0)) is OrderClass.UNCROSS


def test_net_demand_is_buy_minus_sell():
    book = OrderBook(100.0)
    book.submit(_order("b1", "B", 99.0, 10.0))
    book.submit(_order("b2", "B", 98.0, 5.0))
    book.submit(_order("s1", "S", 101.0, 7.0))
    assert book.net_demand(98.0) == 15.0
    assert book.net_demand(99.0) == 10.0
    assert book.net_demand(100.0) == 0.0
    assert book.net_demand(101.0) == -7.0


# ----------------------------------------------------------------------
# replay semantics

def test_replay_modify_loses_time_priority():
    events = [
        MessageEvent("A", Side.SELL, 0, "s1", 101.0, 5.0),
        MessageEvent("A", Side.SELL, 1, "s2", 101.0, 5.0),
        MessageEvent("M", Side.SELL, 2, "s1", 101.0, 5.0),   # re-queued behind s2
        MessageEvent("A", Side.BUY, 3, "b", 101.0, 5.0),
    ]
    result = replay(events, opening_price=100.0)
    assert [t.maker_id for t in result.trades] == ["s2"]


def test_replay_counts_orphans():
    events = [
        MessageEvent("D", Side.BUY, 0, "never_added", 100.0, 1.0),
        MessageEvent("M", Side.BUY, 1, "also_unknown", 100.0, 1.0),
    ]
    result = replay(events, opening_price=100.0)
    assert result.orphan_deletes == 1
    assert result.orphan_modifies == 1
    # the orphan modify still lands in the book, as exchanges reconstruct it
    assert result.book.book_table(Side.BUY) == {100.0: 1.0}


def test_replay_records_clearing_series():
    result = replay(_example_events(), opening_price=110.0)
    assert result.clearing_prices == [(34_260_000_000_000, 120.0)]


# ----------------------------------------------------------------------
# conservation invariants

@st.composite
def _order_stream(draw):
    n = draw(st.integers(min_value=1, max_value=25))
    orders = []
    for i in range(n):
        side = draw(st.sampled_from(["B", "S"]))
        price = draw(st.integers(min_value=95, max_value=105))
        qty = draw(st.integers(min_value=1, max_value=20))
        orders.append(_order(f"o{i}", side, float(price), float(qty)))
    return orders


@given(_order_stream())
@settings(max_examples=120, deadline=None)
def test_quantity_is_conserved(orders):
    book = OrderBook(100.0)
    traded = 0.0
    for order in orders:
        traded += sum(f.quantity for f in book.submit(order))
    resting = sum(rem for _, rem in book.resting_orders())
    submitted = sum(o.quantity for o in orders)
    # every submitted unit is either resting or was matched (once per side)
    assert resting + 2.0 * traded == pytest.approx(submitted)


@given(_order_stream())
@settings(max_examples=120, deadline=None)
def test_book_never_stays_crossed(orders):
    book = OrderBook(100.0)
    for order in orders:
        book.submit(order)
        buys = book.book_table(Side.BUY)
        sells = book.book_table(Side.SELL)
        if buys and sells:
            assert max(buys) < min(sells)
