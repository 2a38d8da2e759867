from __future__ import annotations

import logging
from importlib import import_module
from typing import Callable, cast

_RichHandler: Callable[..., logging.Handler] | None = None

try:
    rich_logging = import_module("rich.logging")
except ImportError:  # pragma: no cover
    RICH_AVAILABLE = False
else:
    RICH_AVAILABLE = True
    _RichHandler = cast(
        Callable[..., logging.Handler], getattr(rich_logging, "RichHandler")
    )


def ensure_rich_logging() -> None:
    """Attach a Rich handler to the schemafactor logger if none is configured."""

    if not RICH_AVAILABLE or _RichHandler is None:
        return

    logger = logging.getLogger("schemafactor")
    if logger.handlers:
        return

    handler = _RichHandler(markup=True, rich_tracebacks=True)
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    logger.propagate = False


def format_rate(rate: float, *, threshold: float = 0.9) -> str:
    """Return a colorized success rate if Rich is available."""

    text = f"{rate:.2f}"
    if not RICH_AVAILABLE:
        return text

    if rate >= threshold:
        style = "bold green"
    elif rate >= threshold / 2:
        style = "bold yellow"
    else:
        style = "bold red"

    return f"[{style}]{text}[/{style}]"
