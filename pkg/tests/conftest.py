import pytest

from zilob.book import Book, Side

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_book(bids=None, asks=None, time=0):
    """Book from {quote: count} maps; every order is born at ``time``."""
    book = Book()
    book.time = time
    for q, n in (bids or {}).items():
        for _ in range(n):
            book.place_limit(Side.BUY, q, time)
    for q, n in (asks or {}).items():
        for _ in range(n):
            book.place_limit(Side.SELL, q, time)
    return book


@pytest.fixture
def book_100_103():
    return make_book({100: 1, 98: 2}, {103: 1, 105: 1})
