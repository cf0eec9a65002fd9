"""Fixture-backed model clients for offline runs.

Fixtures are JSON files of `{"entries": [{request_sha256, site, attempt, reply}]}`.
Lookup tries the exact request hash first, then the (site, attempt) pair where
attempt counts calls made for that site in this process.
"""

import hashlib
import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional

from app.models.schemas import FixtureEntry, FixtureFile, Prompt
from app.services.synth import ModelClient, TransportError


logger = logging.getLogger(__name__)


def request_hash(prompt: Prompt) -> str:
    return hashlib.sha256(prompt.render().encode("utf-8")).hexdigest()


def load_fixtures(path: Path | str) -> FixtureFile:
    """A fixture file, or every `*.json` file in a directory merged in name order."""
    root = Path(path)
    if root.is_dir():
        entries: list[FixtureEntry] = []
        for file in sorted(root.glob("*.json")):
            entries.extend(FixtureFile.model_validate_json(file.read_text(encoding="utf-8")).entries)
        return FixtureFile(entries=entries)
    if not root.exists():
        raise FileNotFoundError(f"fixtures not found: {root}")
    return FixtureFile.model_validate_json(root.read_text(encoding="utf-8"))


class ReplayModelClient:
    source = "replay"

    def __init__(self, fixtures: FixtureFile):
        self._by_hash = {e.request_sha256: e.reply for e in fixtures.entries if e.request_sha256}
        self._by_site = {(e.site, e.attempt): e.reply for e in fixtures.entries if e.site}
        self._attempts: dict[str, int] = defaultdict(int)

    @classmethod
    def from_path(cls, path: Path | str) -> "ReplayModelClient":
        return cls(load_fixtures(path))

    def complete(self, prompt: Prompt) -> str:
        self._attempts[prompt.site] += 1
        attempt = self._attempts[prompt.site]
        digest = request_hash(prompt)
        if digest in self._by_hash:
            return self._by_hash[digest]
        reply = self._by_site.get((prompt.site, attempt))
        if reply is None:
            raise TransportError(f"no fixture for {prompt.site} attempt {attempt}")
        logger.debug(f"Replayed fixture for {prompt.site} attempt {attempt}")
        return reply


class RecordingModelClient:
    """Wraps a live client and records every exchange under both lookup keys."""

    source = "external"

    def __init__(self, inner: ModelClient, path: Path | str):
        self.inner = inner
        self.path = Path(path)
        self.entries: list[FixtureEntry] = []
        self._attempts: dict[str, int] = defaultdict(int)

    def complete(self, prompt: Prompt) -> str:
        reply = self.inner.complete(prompt)
        self._attempts[prompt.site] += 1
        self.entries.append(FixtureEntry(
            request_sha256=request_hash(prompt),
            site=prompt.site or None,
            attempt=self._attempts[prompt.site],
            reply=reply,
        ))
        return reply

    def save(self) -> Optional[Path]:
        if not self.entries:
            return None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(FixtureFile(entries=self.entries).model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Recorded {len(self.entries)} fixture(s) to {self.path}")
        return self.path
