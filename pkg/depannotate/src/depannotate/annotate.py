"""Add dependency-path annotations to relation-corpus JSONL files.

Input and output use the corpus record schema::

    {"tokens": [...], "head": [s, e), "tail": [s, e), "relation": "...", "dep_path": [...]}

Records that already carry ``dep_path`` pass through byte-for-byte unless
``--overwrite`` is given, so re-running the tool on its own output is a
fixed point. Output order matches input order.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .parser import dependency_path

log = logging.getLogger("depannotate")


class SchemaError(ValueError):
    """Input record outside the corpus JSONL schema."""


def validate_record(rec: dict) -> None:
    for field in ("tokens", "head", "tail", "relation"):
        if field not in rec:
            raise SchemaError(f"missing field {field!r}")
    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise SchemaError("field 'tokens' must be a non-empty list of strings")
    n = len(tokens)
    for name in ("head", "tail"):
        span = rec[name]
        if not (isinstance(span, list) and len(span) == 2 and all(isinstance(v, int) for v in span)):
            raise SchemaError(f"field {name!r} must be a [start, end] integer pair")
        s, e = span
        if not (0 <= s < e <= n):
            raise SchemaError(f"{name} span [{s},{e}) out of bounds for {n} tokens")
    if not isinstance(rec["relation"], str):
        raise SchemaError("field 'relation' must be a string")
    dep = rec.get("dep_path")
    if dep is not None:
        if not (isinstance(dep, list) and all(isinstance(i, int) for i in dep)):
            raise SchemaError("field 'dep_path' must be a list of integers")
        if any(not 0 <= i < n for i in dep):
            raise SchemaError("dep_path indices out of bounds")


def annotate_record(rec: dict) -> dict:
    """Return the record with dep_path filled in (existing value replaced)."""
    out = {k: v for k, v in rec.items() if k != "dep_path"}
    try:
        path = dependency_path(rec["tokens"], tuple(rec["head"]), tuple(rec["tail"]))
    except Exception as exc:
        log.warning("could not parse %r: %s; writing empty dep_path",
                    " ".join(rec["tokens"][:8]), exc)
        path = []
    out["dep_path"] = path
    return out


def annotate_file(in_path: str | Path, out_path: str | Path,
                  overwrite: bool = False) -> int:
    """Annotate every record; returns the number of records written.

    Already-annotated records are copied verbatim (the original line bytes)
    unless ``overwrite`` is set.
    """
    in_path, out_path = Path(in_path), Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with open(in_path, encoding="utf-8") as src, \
            open(out_path, "w", encoding="utf-8") as dst:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                validate_record(rec)
            except (json.JSONDecodeError, SchemaError) as exc:
                raise SchemaError(f"line {lineno}: {exc}") from exc
            if "dep_path" in rec and not overwrite:
                dst.write(line if line.endswith("\n") else line + "\n")
            else:
                dst.write(json.dumps(annotate_record(rec), separators=(",", ":")) + "\n")
            written += 1
    return written


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="annotate",
        description="add dependency-path annotations to a relation corpus")
    parser.add_argument("--in", dest="in_path", required=True, help="input JSONL")
    parser.add_argument("--out", dest="out_path", required=True, help="output JSONL")
    parser.add_argument("--overwrite", action="store_true",
                        help="recompute dep_path even when already present")
    parser.add_argument("--verbose", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not Path(args.in_path).exists():
        print(f"error: input file not found: {args.in_path}", file=sys.stderr)
        return 1
    try:
        count = annotate_file(args.in_path, args.out_path, overwrite=args.overwrite)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 2
    log.info("annotated %d records -> %s", count, args.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
