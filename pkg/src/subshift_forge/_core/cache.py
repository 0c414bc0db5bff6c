from __future__ import annotations

import pooch

PKG_CACHE_DIR = "subshift-forge"


def is_remote(path) -> bool:
    """Whether ``path`` names a sequence file served over http(s)."""
    return str(path).startswith(("http://", "https://"))


def retrieve_sequence(url: str, known_hash: str | None = None) -> str:
    """Download and cache the sequence file stored at url."""
    return pooch.retrieve(
        url=url,
        known_hash=known_hash,
        path=pooch.os_cache(PKG_CACHE_DIR),
        progressbar=False,
    )
