"""
Shared utilities for workbench artifacts
JSON / JSON-lines loading and saving, atomic writes, digests and an ordered thread pool map
"""

import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple, TypeVar
import logging

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def atomic_write_text(file_path: str, text: str):
    """Write text to file_path via a temp file in the same directory plus rename"""
    directory = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, file_path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug(f"Wrote {len(text)} chars to {file_path}")


def load_json_file(file_path: str) -> Any:
    """Load a JSON document"""
    with open(file_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_json_file(file_path: str, payload: Any, indent: Optional[int] = 2):
    """Save a JSON document atomically"""
    try:
        atomic_write_text(file_path, json.dumps(payload, indent=indent, sort_keys=False) + '\n')
    except Exception as e:
        logger.error(f"Error saving JSON to {file_path}: {e}")
        raise


def save_jsonl_file(file_path: str, records: Iterable[Dict]):
    """Save records as JSON-lines (one compact object per line), atomically"""
    lines = [json.dumps(record, separators=(',', ':')) for record in records]
    atomic_write_text(file_path, ''.join(line + '\n' for line in lines))
    logger.debug(f"Saved {len(lines)} JSON lines to {file_path}")


def iter_jsonl_lines(file_path: str) -> Iterator[Tuple[int, str]]:
    """Yield (1-based line number, raw line) pairs, skipping nothing"""
    with open(file_path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, 1):
            yield line_number, line


def canonical_json(payload: Any) -> str:
    """Key-sorted compact JSON used for digests"""
    return json.dumps(payload, sort_keys=True, separators=(',', ':'))


def digest_of(payload: Any, length: int = 16) -> str:
    """Short SHA-256 hex digest of the canonical JSON form of payload"""
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()[:length]


def ordered_parallel_map(fn: Callable[[T], R], items: List[T], threads: int = 1) -> List[R]:
    """Map fn over items on a thread pool, returning results in input order"""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunked(items: List[T], size: int) -> List[List[T]]:
    """Split items into consecutive chunks of at most size elements"""
    if size <= 0:
        raise ValueError(f"chunk size must be positive, got {size}")
    return [items[i:i + size] for i in range(0, len(items), size)]
