"""Central limit order book with strict price-time priority.

One MatchingEngine owns every book and a single monotonic sequence, so
order ids, trade ids and priority stamps are globally ordered.  Trades
always execute at the resting (maker) price.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional

from .errors import BadQuantity, BadTick, UnknownInstrument, UnknownOrder
from .numerics import dec


class Side(enum.Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def other(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY


class TimeInForce(enum.Enum):
    GTC = "gtc"   # remainder rests on the book
    IOC = "ioc"   # remainder is discarded


@dataclass
class Order:
    id: int
    account_id: str
    instrument_id: str
    side: Side
    price: Decimal
    quantity: int
    remaining: int
    time_in_force: TimeInForce
    sequence: int      # priority stamp, assigned on acceptance
    active: bool = True


@dataclass(frozen=True)
class Trade:
    id: int
    instrument_id: str
    price: Decimal      # maker price
    quantity: int
    buyer: str
    seller: str
    maker_order_id: int
    taker_order_id: int
    self_trade: bool    # both sides from the same account; flagged, not blocked


class _BookSide:
    """One side of a book: a lazy-deletion heap of (price key, seq, order)."""

    def __init__(self, side: Side):
        self.side = side
        self._heap: list[tuple[Decimal, int, Order]] = []

    def _key(self, price: Decimal) -> Decimal:
        return -price if self.side is Side.BUY else price

    def push(self, order: Order) -> None:
        heapq.heappush(self._heap, (self._key(order.price), order.sequence, order))

    def peek(self) -> Optional[Order]:
        while self._heap:
            order = self._heap[0][2]
            if order.active and order.remaining > 0:
                return order
            heapq.heappop(self._heap)
        return None

    def pop(self) -> None:
        heapq.heappop(self._heap)

    def orders(self) -> list[Order]:
        """Live orders in priority sequence (for depth reporting)."""
        live = [e for e in self._heap if e[2].active and e[2].remaining > 0]
        return [e[2] for e in sorted(live)]


class OrderBook:
    def __init__(self, instrument_id: str, tick_size: Decimal):
        self.instrument_id = instrument_id
        self.tick_size = dec(tick_size)
        self.bids = _BookSide(Side.BUY)
        self.asks = _BookSide(Side.SELL)

    def best_bid(self) -> Optional[Decimal]:
        top = self.bids.peek()
        return top.price if top else None

    def best_ask(self) -> Optional[Decimal]:
        top = self.asks.peek()
        return top.price if top else None

    def crossed(self) -> bool:
        bid, ask = self.best_bid(), self.best_ask()
        return bid is not None and ask is not None and bid >= ask


class MatchingEngine:
    """All books plus the global id/sequence counter."""

    def __init__(self):
        self.books: dict[str, OrderBook] = {}
        self.orders: dict[int, Order] = {}
        self._next_id = 1

    def _allocate(self) -> int:
        n = self._next_id
        self._next_id += 1
        return n

    def create_book(self, instrument_id: str, tick_size: Decimal) -> OrderBook:
        book = OrderBook(instrument_id, tick_size)
        self.books[instrument_id] = book
        return book

    def book(self, instrument_id: str) -> OrderBook:
        try:
            return self.books[instrument_id]
        except KeyError:
            raise UnknownInstrument(f"no book for {instrument_id}") from None

    def submit(self, account_id: str, instrument_id: str, side: Side,
               price: Decimal, quantity: int,
               time_in_force: TimeInForce = TimeInForce.GTC,
               ) -> tuple[Order, list[Trade]]:
        """Match a limit order, then rest or discard the remainder.

        Postcondition: the book never crosses (best bid < best ask).
        """
        book = self.book(instrument_id)
        price = dec(price)
        if quantity <= 0 or quantity != int(quantity):
            raise BadQuantity(f"quantity must be a positive integer, got {quantity}")
        if price <= 0 or price % book.tick_size != 0:
            raise BadTick(f"price {price} not a positive multiple of {book.tick_size}")

        order = Order(self._allocate(), account_id, instrument_id, side,
                      price, quantity, quantity, time_in_force,
                      sequence=self._allocate())
        self.orders[order.id] = order

        trades = []
        contra = book.asks if side is Side.BUY else book.bids
        while order.remaining > 0:
            maker = contra.peek()
            if maker is None:
                break
            if side is Side.BUY and maker.price > price:
                break
            if side is Side.SELL and maker.price < price:
                break
            qty = min(order.remaining, maker.remaining)
            maker.remaining -= qty
            order.remaining -= qty
            buyer, seller = ((order.account_id, maker.account_id)
                             if side is Side.BUY
                             else (maker.account_id, order.account_id))
            trades.append(Trade(self._allocate(), instrument_id, maker.price,
                                qty, buyer, seller, maker.id, order.id,
                                self_trade=buyer == seller))
            if maker.remaining == 0:
                maker.active = False
                contra.pop()

        if order.remaining > 0:
            if time_in_force is TimeInForce.GTC:
                (book.bids if side is Side.BUY else book.asks).push(order)
            else:
                order.active = False
        elif order.remaining == 0:
            order.active = False
        assert not book.crossed(), f"book {instrument_id} crossed after submit"
        return order, trades

    def cancel(self, order_id: int) -> Order:
        order = self.orders.get(order_id)
        if order is None or not order.active:
            raise UnknownOrder(f"order {order_id} not open")
        order.active = False
        return order

    def best_bid_ask(self, instrument_id: str
                     ) -> tuple[Optional[Decimal], Optional[Decimal]]:
        book = self.book(instrument_id)
        return book.best_bid(), book.best_ask()

    def depth(self, instrument_id: str) -> dict[str, list[tuple[Decimal, int]]]:
        """Aggregated (price, open quantity) levels, best first."""
        book = self.book(instrument_id)
        out: dict[str, list[tuple[Decimal, int]]] = {}
        for name, side in (("bids", book.bids), ("asks", book.asks)):
            levels: list[tuple[Decimal, int]] = []
            for order in side.orders():
                if levels and levels[-1][0] == order.price:
                    levels[-1] = (order.price, levels[-1][1] + order.remaining)
                else:
                    levels.append((order.price, order.remaining))
            out[name] = levels
        return out
