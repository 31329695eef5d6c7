"""Price panels, index series and in-sample windows.

Prices are stored one row per asset, one column per trading date. Missing
observations are ``NaN``. Dates are opaque labels that only need to sort.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DomainError, EmptyUniverseError, ParseError, ValidationError

logger = logging.getLogger(__name__)

PANEL_HEADER = ("date", "asset", "price", "member")


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Asset-by-date price matrix with a per-day index-membership mask.

    Attributes
    ----------
    assets : tuple of str
    dates : tuple of str
        Strictly increasing.
    prices : ndarray of shape (n_assets, n_dates)
        ``NaN`` where no price was observed.
    membership : ndarray of bool, same shape as ``prices``
    excluded : tuple of str
        Assets dropped by :func:`window` because of price gaps.
    """

    assets: tuple
    dates: tuple
    prices: np.ndarray
    membership: np.ndarray
    excluded: tuple = field(default=())

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        membership = np.asarray(self.membership, dtype=bool)
        if prices.ndim != 2 or prices.shape != (len(self.assets), len(self.dates)):
            raise ValidationError(
                f"prices shape {prices.shape} does not match "
                f"{len(self.assets)} assets x {len(self.dates)} dates"
            )
        if membership.shape != prices.shape:
            raise ValidationError("membership mask must have the same shape as prices")
        if len(set(self.assets)) != len(self.assets):
            raise ValidationError("duplicate asset identifiers")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")
        with np.errstate(invalid="ignore"):
            bad = membership & ~(prices > 0)
        if bad.any():
            i, t = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-positive or missing price for member {self.assets[i]} on {self.dates[t]}"
            )
        prices.setflags(write=False)
        membership.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "membership", membership)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dates", tuple(self.dates))

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def __eq__(self, other):
        if not isinstance(other, PricePanel):
            return NotImplemented
        return (
            self.assets == other.assets
            and self.dates == other.dates
            and np.array_equal(self.prices, other.prices, equal_nan=True)
            and np.array_equal(self.membership, other.membership)
        )

    def date_index(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise DomainError(f"date {date!r} not in panel") from None

    @classmethod
    def from_array(cls, prices, assets=None, dates=None, membership=None):
        """Build a fully-member panel from an ``(n_assets, n_dates)`` array."""
        prices = np.asarray(prices, dtype=float)
        n, m = prices.shape
        assets = tuple(assets) if assets is not None else tuple(f"A{i:03d}" for i in range(n))
        dates = tuple(dates) if dates is not None else tuple(f"{t:05d}" for t in range(m))
        if membership is None:
            membership = np.isfinite(prices)
        return cls(assets, dates, prices, membership)


@dataclass(frozen=True, eq=False)
class IndexSeries:
    """Index levels on a date axis."""

    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != len(self.dates):
            raise ValidationError("index dates and values differ in length")
        if np.any(~(values > 0)):
            raise ValidationError("index values must be positive")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("index dates must be strictly increasing")
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "values", values)

    def align(self, dates) -> np.ndarray:
        """Index values on ``dates``; every date must be present."""
        pos = {d: i for i, d in enumerate(self.dates)}
        missing = [d for d in dates if d not in pos]
        if missing:
            raise DomainError(f"index has no value for {len(missing)} date(s), first {missing[0]!r}")
        return self.values[[pos[d] for d in dates]]


def _parse_member(raw, line):
    raw = raw.strip()
    if raw == "":
        return True
    if raw not in ("0", "1"):
        raise ParseError(f"member must be 0 or 1, got {raw!r}", line)
    return raw == "1"


def load_panel(path) -> PricePanel:
    """Read a long-format CSV with header ``date,asset,price[,member]``.

    Raises
    ------
    ParseError
        On a malformed row (reported with its line number).
    ValidationError
        On a duplicate ``(date, asset)`` pair or a non-positive member price.
    """
    path = Path(path)
    records = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if tuple(header[:3]) != PANEL_HEADER[:3] or len(header) > 4 or (
            len(header) == 4 and header[3] != "member"
        ):
            raise ParseError(f"expected header date,asset,price[,member], got {','.join(header)}", 1)
        has_member = len(header) == 4
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (3, 4) or (len(row) == 4 and not has_member):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            date, asset = row[0].strip(), row[1].strip()
            if not date or not asset:
                raise ParseError("empty date or asset", line)
            try:
                price = float(row[2])
            except ValueError:
                raise ParseError(f"bad price {row[2]!r}", line) from None
            member = _parse_member(row[3], line) if len(row) == 4 else True
            if member and not price > 0:
                raise ValidationError(f"line {line}: non-positive price {price} for member {asset}")
            key = (date, asset)
            if key in records:
                raise ValidationError(f"line {line}: duplicate row for ({date}, {asset})")
            records[key] = (price, member)

    assets = sorted({a for _, a in records})
    dates = sorted({d for d, _ in records})
    a_pos = {a: i for i, a in enumerate(assets)}
    d_pos = {d: j for j, d in enumerate(dates)}
    prices = np.full((len(assets), len(dates)), np.nan)
    membership = np.zeros(prices.shape, dtype=bool)
    for (d, a), (price, member) in records.items():
        i, j = a_pos[a], d_pos[d]
        prices[i, j] = price if price > 0 else np.nan
        membership[i, j] = member
    return PricePanel(tuple(assets), tuple(dates), prices, membership)


def load_index(path) -> IndexSeries:
    """Read a CSV with header ``date,value``."""
    path = Path(path)
    dates, values = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["date", "value"]:
            raise ParseError("expected header date,value", 1)
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", reader.line_num)
            try:
                values.append(float(row[1]))
            except ValueError:
                raise ParseError(f"bad value {row[1]!r}", reader.line_num) from None
            dates.append(row[0].strip())
    order = np.argsort(dates, kind="stable")
    return IndexSeries(tuple(dates[k] for k in order), np.asarray(values)[order])


def write_panel(panel: PricePanel, path) -> None:
    """Write ``panel`` in the long CSV format read by :func:`load_panel`."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PANEL_HEADER)
        for j, d in enumerate(panel.dates):
            for i, a in enumerate(panel.assets):
                p = panel.prices[i, j]
                if np.isfinite(p):
                    w.writerow([d, a, repr(float(p)), int(panel.membership[i, j])])


def window(panel: PricePanel, end_index: int, T: int) -> PricePanel:
    """The ``T``-day slice ending at column ``end_index`` (inclusive).

    Only assets that are index members on the final day of the slice and
    have a complete price history over the slice are kept. Members dropped
    for a price gap are listed in ``excluded`` of the result.

    Raises
    ------
    DomainError
        If the slice would start before the first date.
    EmptyUniverseError
        If no asset survives the filters.
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if end_index < T - 1 or end_index >= panel.n_dates:
        raise DomainError(f"end_index {end_index} out of range for T={T} and {panel.n_dates} dates")
    cols = slice(end_index - T + 1, end_index + 1)
    prices = panel.prices[:, cols]
    member_now = panel.membership[:, end_index]
    complete = np.all(np.isfinite(prices) & (prices > 0), axis=1)
    keep = member_now & complete
    excluded = tuple(a for a, m, c in zip(panel.assets, member_now, complete) if m and not c)
    if excluded:
        logger.warning("excluding %d asset(s) with price gaps: %s", len(excluded), ", ".join(excluded))
    if not keep.any():
        raise EmptyUniverseError(f"no eligible assets in window ending {panel.dates[end_index]}")
    return PricePanel(
        assets=tuple(a for a, k in zip(panel.assets, keep) if k),
        dates=panel.dates[cols],
        prices=prices[keep],
        membership=panel.membership[keep][:, cols],
        excluded=excluded,
    )
