"""Flat key=value configuration with file inclusion.

One `key = value` pair per line, `#` starts a comment, blank lines ignored.
A line `include other.cfg` splices another file (paths resolve relative to
the including file); later assignments win. Every run writes its fully
resolved configuration next to its checkpoints so a run is reproducible
from the artifact directory alone.
"""

from __future__ import annotations

import hashlib
from pathlib import Path


class ConfigError(ValueError):
    pass


_REQUIRED = object()


class Config:
    def __init__(self, values: dict | None = None):
        self.values: dict = dict(values or {})

    @classmethod
    def load(cls, path) -> "Config":
        cfg = cls()
        cfg._read(Path(path), seen=set())
        return cfg

    @classmethod
    def from_text(cls, text: str, base_dir=".") -> "Config":
        cfg = cls()
        cfg._parse(text, Path(base_dir), seen=set(), origin="<text>")
        return cfg

    def _read(self, path: Path, seen: set):
        real = path.resolve()
        if real in seen:
            raise ConfigError(f"circular include of {path}")
        seen.add(real)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        self._parse(path.read_text(), path.parent, seen, origin=str(path))

    def _parse(self, text: str, base_dir: Path, seen: set, origin: str):
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("include ") or line == "include":
                target = line[len("include"):].strip()
                if not target:
                    raise ConfigError(f"{origin}:{lineno}: include needs a path")
                self._read(base_dir / target, seen)
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{origin}:{lineno}: empty key")
            self.values[key] = value.strip()

    def with_overrides(self, pairs) -> "Config":
        out = Config(self.values)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override must be key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            out.values[key.strip()] = value.strip()
        return out

    def get(self, key: str, default=_REQUIRED) -> str:
        if key in self.values:
            return self.values[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_int(self, key: str, default=_REQUIRED) -> int:
        raw = self.get(key, default)
        if isinstance(raw, int):
            return raw
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not an integer: {raw!r}") from None

    def get_float(self, key: str, default=_REQUIRED) -> float:
        raw = self.get(key, default)
        if isinstance(raw, (int, float)):
            return float(raw)
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a number: {raw!r}") from None

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        raw = self.get(key, default)
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"config key {key!r} is not a boolean: {raw!r}")

    def resolved_text(self) -> str:
        lines = [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()

    def write(self, path) -> None:
        Path(path).write_text(self.resolved_text())
