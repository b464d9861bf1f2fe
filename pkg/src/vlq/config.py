"""Run configuration files and run manifests.

Configs are INI-style text handled by configparser with case-sensitive
keys and no interpolation.  The canonical serialization writes floats
with 17 significant digits, so parse -> serialize -> parse is the
identity on the parsed tree and a manifest can reproduce a run bit for
bit.

A manifest is an ordinary config with one extra [manifest] section
recording the command, package version, seed, and creation time.  Every
reader here skips [manifest], so a manifest file can be fed back through
--config unchanged.
"""

import configparser
import datetime
import io

from . import __version__

MANIFEST_SECTION = "manifest"


class ConfigError(ValueError):
    """Malformed or incomplete configuration; maps to CLI exit code 1."""


def _parser():
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str  # keys are case-sensitive
    return p


def parse_config(text):
    """Parse config text into {section: {key: raw string value}}."""
    p = _parser()
    try:
        p.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config syntax: {exc}") from exc
    return {sec: dict(p[sec]) for sec in p.sections()}


def read_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(tree):
    """Canonical text form; section and key order is preserved as given."""
    p = _parser()
    for sec, items in tree.items():
        p.add_section(sec)
        for key, val in items.items():
            p[sec][key] = format_value(val)
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue()


def write_config(path, tree):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(tree))


def format_value(val):
    """Canonical string for a config value; floats get 17 significant
    digits, sequences become comma lists."""
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return "%.17g" % val
    if isinstance(val, (list, tuple)):
        return ",".join(format_value(v) for v in val)
    return str(val)


_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _section(tree, sec):
    if sec not in tree:
        raise ConfigError(f"missing [{sec}] section")
    return tree[sec]


def _raw(tree, sec, key, default):
    items = _section(tree, sec)
    if key not in items:
        if default is _REQUIRED:
            raise ConfigError(f"missing key '{key}' in [{sec}]")
        return None
    return items[key]


_REQUIRED = object()


def get_str(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    return default if raw is None else raw.strip()


def get_float(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: not a float: {raw!r}") from exc


def get_int(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    if raw is None:
        return default
    try:
        return int(raw, 0)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: not an integer: {raw!r}") from exc


def get_bool(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    if raw is None:
        return default
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError as exc:
        raise ConfigError(f"[{sec}] {key}: not a boolean: {raw!r}") from exc


def get_floats(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    if raw is None:
        return default
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: not a float list: {raw!r}") from exc


def get_ints(tree, sec, key, default=_REQUIRED):
    raw = _raw(tree, sec, key, default)
    if raw is None:
        return default
    try:
        return [int(tok, 0) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: not an integer list: {raw!r}") from exc


def strip_manifest(tree):
    return {sec: items for sec, items in tree.items() if sec != MANIFEST_SECTION}


def make_manifest(command, tree, seed):
    """Resolved config plus provenance, ready for write_config.

    The created timestamp is informational; nothing downstream reads it,
    so reruns stay byte-identical in their data outputs.
    """
    out = {
        MANIFEST_SECTION: {
            "command": command,
            "version": __version__,
            "seed": str(seed),
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
    }
    out.update(strip_manifest(tree))
    return out
