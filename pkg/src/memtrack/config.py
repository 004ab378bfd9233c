"""Flat key=value configuration files with [section] headers.

Grammar (documented in docs/config.md): blank lines and #-comments are
ignored; a section header is ``[name]``; every other line is ``key = value``.
Keys are reported as ``section.key``; values stay strings until a typed
getter converts them.  Parse failures carry the 1-based line number.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["parse_config", "load_config", "ConfigView"]


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{source}:{lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        full = f"{section}.{key}" if section else key
        if full in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {full!r}")
        values[full] = value.strip()
    return values


def load_config(path) -> "ConfigView":
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ConfigView(parse_config(text, source=str(path)))


class ConfigView:
    """Typed access over parsed key/value pairs."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(values or {})

    def get_str(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def _convert(self, key: str, conv, default):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"option {key!r}: cannot parse {raw!r}") from exc

    def get_int(self, key: str, default: int | None = None) -> int | None:
        return self._convert(key, int, default)

    def get_float(self, key: str, default: float | None = None) -> float | None:
        return self._convert(key, float, default)

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        def conv(raw: str) -> bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return self._convert(key, conv, default)

    def get_float_pairs(self, key: str, default=None):
        """Parse e.g. ``0.4:0.6, 0.6:0.8`` into [(0.4, 0.6), (0.6, 0.8)]."""
        if key not in self.values:
            return default
        pairs = []
        for chunk in self.values[key].split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) != 2:
                raise ConfigError(f"option {key!r}: expected a:b pairs, got {chunk!r}")
            try:
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"option {key!r}: cannot parse {chunk!r}") from exc
        if not pairs:
            raise ConfigError(f"option {key!r}: no pairs given")
        return pairs

    def get_int_list(self, key: str, default=None):
        if key not in self.values:
            return default
        try:
            return [int(x) for x in self.values[key].split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"option {key!r}: expected integers") from exc
