"""Price files to normalised log-returns."""

from __future__ import annotations

import math

import numpy as np

from ..errors import IngestionError


def _price(line: str, lineno: int) -> float | None:
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    fields = [f.strip() for f in text.replace(";", ",").split(",") if f.strip()]
    if len(fields) == 1 and len(text.split()) > 1:
        fields = text.split()
    try:
        value = float(fields[-1])
    except ValueError:
        if lineno == 1:
            return None  # header row
        raise IngestionError(f"line {lineno}: cannot parse a price from {text!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise IngestionError(f"line {lineno}: price must be positive and finite, got {value!r}")
    return value


def ingest_prices(path) -> np.ndarray:
    """Log-returns of the closing prices in ``path`` scaled to unit sample variance.

    One price per line; when a line has several comma- or space-separated
    fields the last one is the price (a leading date column is ignored).
    A non-numeric first line is taken as a header.
    """
    prices = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            value = _price(line, lineno)
            if value is not None:
                prices.append(value)
    return normalize_returns(prices)


def normalize_returns(prices) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    if prices.size < 3:
        raise IngestionError(f"need at least 3 prices, got {prices.size}")
    if np.any(prices <= 0):
        raise IngestionError("prices must be positive")
    returns = np.diff(np.log(prices))
    sd = returns.std(ddof=1)
    if not sd > 1e-12 * max(1.0, float(np.abs(returns).max())):
        raise IngestionError("returns have zero variance and cannot be normalised")
    return returns / sd
