"""Single-URL HTML download with redirect, size and charset handling."""

import codecs
import logging
import os
import re
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from email.message import Message
from typing import Optional
from urllib.parse import urlparse

import requests

from . import __version__
from .errors import (
    BodyTooLarge,
    ConnectionFailed,
    HttpError,
    InvalidUrl,
    NotHtml,
    Timeout,
    TooManyRedirects,
)

log = logging.getLogger(__name__)

HTML_TYPES = ("text/html", "application/xhtml+xml")
_META_SCAN_BYTES = 4096
_META_CHARSET = re.compile(
    rb"""<meta[^>]+charset\s*=\s*["']?\s*([A-Za-z0-9_.:-]+)""", re.IGNORECASE)
_CHUNK = 16 * 1024


@dataclass(frozen=True)
class FetchConfig:
    timeout: float = 10.0
    max_bytes: int = 5 * 1024 * 1024
    max_redirects: int = 5
    user_agent: str = f"product-extract/{__version__}"

    @classmethod
    def from_env(cls, **overrides) -> "FetchConfig":
        cfg = cls()
        if os.environ.get("PRODUCT_EXTRACT_TIMEOUT_S"):
            cfg = replace(cfg, timeout=float(os.environ["PRODUCT_EXTRACT_TIMEOUT_S"]))
        if os.environ.get("PRODUCT_EXTRACT_MAX_BYTES"):
            cfg = replace(cfg, max_bytes=int(os.environ["PRODUCT_EXTRACT_MAX_BYTES"]))
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(cfg, **overrides)


@dataclass(frozen=True)
class FetchedDocument:
    requested_url: str
    final_url: str
    status: int
    content_type: str
    body: str
    fetched_at: datetime
    encoding: str = "utf-8"


def _header_charset(content_type: str) -> Optional[str]:
    msg = Message()
    msg["content-type"] = content_type
    return msg.get_param("charset")


def _known_codec(name) -> Optional[str]:
    if not name:
        return None
    try:
        return codecs.lookup(name.strip()).name
    except LookupError:
        return None


def sniff_encoding(content_type: str, raw: bytes) -> str:
    """Header charset, then a ``<meta>`` charset scan, then UTF-8."""
    enc = _known_codec(_header_charset(content_type or ""))
    if enc:
        return enc
    m = _META_CHARSET.search(raw[:_META_SCAN_BYTES])
    if m:
        enc = _known_codec(m.group(1).decode("ascii", "replace"))
        if enc:
            return enc
    return "utf-8"


def _check_url(url: str) -> None:
    parsed = urlparse(url)
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        raise InvalidUrl(f"not an http(s) URL: {url!r}")


def fetch(url: str, config: Optional[FetchConfig] = None, force: bool = False) -> FetchedDocument:
    """Download ``url`` and return the decoded HTML.

    A fresh session is used per call, so no cookies survive between
    calls. The whole download, including redirects, is bounded by
    ``config.timeout`` (each socket operation also gets that timeout).
    Non-HTML responses raise NotHtml unless ``force`` is set.
    """
    config = config or FetchConfig.from_env()
    _check_url(url)
    deadline = time.monotonic() + config.timeout

    with requests.Session() as session:
        session.max_redirects = config.max_redirects
        session.headers["User-Agent"] = config.user_agent
        try:
            resp = session.get(url, timeout=config.timeout, stream=True, allow_redirects=True)
        except requests.TooManyRedirects as exc:
            raise TooManyRedirects(f"more than {config.max_redirects} redirects from {url}") from exc
        except requests.Timeout as exc:
            raise Timeout(f"timed out after {config.timeout}s fetching {url}") from exc
        except requests.exceptions.InvalidURL as exc:
            raise InvalidUrl(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise ConnectionFailed(f"could not connect to {url}: {exc}") from exc

        with resp:
            if not 200 <= resp.status_code < 300:
                raise HttpError(resp.status_code, resp.url)
            declared = resp.headers.get("Content-Length")
            if declared and declared.isdigit() and int(declared) > config.max_bytes:
                raise BodyTooLarge(f"Content-Length {declared} exceeds {config.max_bytes} bytes")

            chunks = []
            size = 0
            try:
                for chunk in resp.iter_content(_CHUNK):
                    size += len(chunk)
                    if size > config.max_bytes:
                        raise BodyTooLarge(f"body exceeds {config.max_bytes} bytes")
                    chunks.append(chunk)
                    if time.monotonic() > deadline:
                        raise Timeout(f"timed out after {config.timeout}s reading {url}")
            except requests.Timeout as exc:
                raise Timeout(f"timed out after {config.timeout}s reading {url}") from exc
            except requests.ConnectionError as exc:
                # urllib3 surfaces read timeouts during streaming as ConnectionError
                if "timed out" in str(exc).lower():
                    raise Timeout(f"timed out after {config.timeout}s reading {url}") from exc
                raise ConnectionFailed(f"connection to {url} failed: {exc}") from exc
            raw = b"".join(chunks)

            content_type = resp.headers.get("Content-Type", "")
            mime = content_type.split(";", 1)[0].strip().lower()
            if mime not in HTML_TYPES:
                if not force:
                    raise NotHtml(f"content type {content_type or '<none>'!r} is not HTML")
                log.warning("content type %r is not HTML; continuing (forced)", content_type)

            encoding = sniff_encoding(content_type, raw)
            body = raw.decode(encoding, errors="replace")
            return FetchedDocument(
                requested_url=url,
                final_url=resp.url,
                status=resp.status_code,
                content_type=content_type,
                body=body,
                fetched_at=datetime.now(timezone.utc),
                encoding=encoding,
            )
