"""Helpers for the line-oriented text formats."""

from .exceptions import HeaderError


def fmt_float(x):
    """Shortest decimal that round-trips to the same float64 (``1.0`` -> ``"1"``)."""
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def fmt_row(values):
    return " ".join(fmt_float(v) for v in values)


def parse_header(line, magic, *, rest_key=None):
    """Split ``MAGIC v1 key=value ...`` into a dict.

    If `rest_key` is given, everything after ``rest_key=`` is taken verbatim
    (it may contain spaces).
    """
    line = line.rstrip("\n")
    rest = None
    if rest_key is not None:
        marker = f" {rest_key}="
        pos = line.find(marker)
        if pos >= 0:
            rest = line[pos + len(marker):]
            line = line[:pos]
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != magic:
        raise HeaderError(f"expected '{magic}' header, got {line[:60]!r}")
    if tokens[1] != "v1":
        raise HeaderError(f"unsupported {magic} version {tokens[1]!r}")
    fields = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise HeaderError(f"malformed header field {tok!r}")
        fields[key] = value
    if rest is not None:
        fields[rest_key] = rest
    return fields


def header_int(fields, key, *, required=True, default=None):
    if key not in fields:
        if required:
            raise HeaderError(f"header is missing '{key}'")
        return default
    try:
        return int(fields[key])
    except ValueError:
        raise HeaderError(f"header field {key}={fields[key]!r} is not an integer") from None


def header_float(fields, key):
    if key not in fields:
        raise HeaderError(f"header is missing '{key}'")
    try:
        return float(fields[key])
    except ValueError:
        raise HeaderError(f"header field {key}={fields[key]!r} is not a number") from None
