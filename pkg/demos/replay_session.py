"""Replay a message log through the matching engine.

Walks the bundled four-message session first — a miniature auction whose
outcome can be checked by hand — and then a synthesized morning of trading,
showing how the clearing price is pinned to the last transaction and how the
book looks when the dust settles.
"""

import importlib.resources

from bookvol.calibration import format_log, parse_messages, synthesize_log
from bookvol.lob import Side, replay
from bookvol.params import demo_params


def show_book(book) -> None:
    for side in (Side.BUY, Side.SELL):
        rows = book.book_table(side)
        print(f"  {side.name.lower():4s} book:", " | ".join(
            f"{q:g} @ {p:g}" for p, q in rows.items()) or "(empty)")


def main() -> None:
    log_path = importlib.resources.files("bookvol") / "data" / "example1.log"
    events = parse_messages(log_path.read_text()).events

    print("== four-message example ==")
    result = replay(list(events), opening_price=110.0)
    for t in result.trades:
        print(f"  trade: {t.quantity:g} shares at {t.price:g} "
              f"(maker {t.maker_id}, taker {t.taker_id})")
    print(f"  clearing price pi = {result.book.clearing_price:g}")
    show_book(result.book)

    print("\n== a synthesized half hour, one bar per minute ==")
    params = demo_params()
    text = format_log(synthesize_log(params, n_bars=30, seed=12))
    parsed = parse_messages(text)
    print(f"  {len(parsed.events)} messages parsed, {len(parsed.issues)} rejected")

    result = replay(list(parsed.events), opening_price=params.pi0)
    print(f"  {len(result.trades)} trades; last ten clearing prices:")
    tail = result.clearing_prices[-10:]
    print("   ", ", ".join(f"{price:.4f}" for _, price in tail))
    show_book(result.book)


if __name__ == "__main__":
    main()
