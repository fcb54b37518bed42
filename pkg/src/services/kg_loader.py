"""Read and write MMKG directories (UTF-8, tab-separated, LF line endings).

Layout of one KG directory::

    entities.tsv      id <TAB> name
    rel_triples.tsv   head id <TAB> relation label <TAB> tail id
    attr.tsv          entity id <TAB> attribute label
    visual.tsv        entity id <TAB> d floats      (optional)
    surface.tsv       entity id <TAB> d floats      (optional)

A pair directory holds ``kg1/``, ``kg2/`` and ``alignments.tsv``.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.models.kg import MMKG, Pair
from src.utils.errors import DataError

logger = logging.getLogger(__name__)

ENTITIES_FILE = "entities.tsv"
TRIPLES_FILE = "rel_triples.tsv"
ATTR_FILE = "attr.tsv"
DENSE_FILES = {"v": "visual.tsv", "s": "surface.tsv"}
ALIGNMENTS_FILE = "alignments.tsv"


def _read_table(path: Path, min_columns: int, exact: bool = True) -> pd.DataFrame:
    """Parse a TSV file into string columns; the DataFrame index is the 0-based line number."""
    if not path.exists():
        raise DataError("file not found", str(path))
    text = path.read_text(encoding="utf-8").replace("\r\n", "\n").replace("\r", "\n")
    if not text.strip():
        return pd.DataFrame(columns=range(min_columns))
    try:
        df = pd.read_csv(io.StringIO(text), sep="\t", header=None, dtype=str, quoting=csv.QUOTE_NONE,
                         keep_default_na=False, skip_blank_lines=False)
    except pd.errors.ParserError as e:
        ragged = _first_ragged_line(text)
        if ragged is None:
            raise DataError(f"malformed line ({e})", str(path)) from None
        lineno, expected, found = ragged
        raise DataError(f"expected {expected} fields, found {found}", str(path), lineno) from None

    df = df[~df.isna().all(axis=1) & ~(df.fillna("") == "").all(axis=1)]
    if df.shape[1] < min_columns or (exact and df.shape[1] != min_columns):
        lineno = int(df.index[0]) + 1 if len(df) else 1
        raise DataError(f"expected {min_columns} columns, found {df.shape[1]}", str(path), lineno)
    incomplete = df.isna().any(axis=1) | (df == "").any(axis=1)
    if incomplete.any():
        lineno = int(df.index[incomplete.to_numpy()][0]) + 1
        raise DataError(f"expected {df.shape[1]} non-empty fields", str(path), lineno)
    return df


def _first_ragged_line(text: str) -> Optional[Tuple[int, int, int]]:
    """(1-based line, expected, found) of the first line wider than the first non-empty line."""
    expected = None
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        found = line.count("\t") + 1
        if expected is None:
            expected = found
        elif found > expected:
            return lineno, expected, found
    return None


def _parse_id(value: str, path: Path, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"entity id {value!r} is not an integer", str(path), lineno) from None


def _load_dense(path: Path, entities: Dict[int, str]) -> Dict[int, np.ndarray]:
    if not path.exists():
        return {}
    df = _read_table(path, 2, exact=False)
    vectors: Dict[int, np.ndarray] = {}
    for lineno, row in zip(df.index + 1, df.to_numpy(dtype=object)):
        eid = _parse_id(row[0], path, lineno)
        if eid not in entities:
            raise DataError(f"vector for undeclared entity {eid}", str(path), lineno)
        try:
            vectors[eid] = np.asarray(row[1:], dtype=object).astype(np.float64)
        except ValueError:
            raise DataError("non-numeric feature value", str(path), lineno) from None
    return vectors


def load_mmkg(path) -> MMKG:
    """Load and validate one KG directory."""
    root = Path(path)
    if not root.is_dir():
        raise DataError("KG directory not found", str(root))

    entities: Dict[int, str] = {}
    entities_path = root / ENTITIES_FILE
    df = _read_table(entities_path, 2)
    for lineno, (raw_id, name) in zip(df.index + 1, df.to_numpy(dtype=object)):
        eid = _parse_id(raw_id, entities_path, lineno)
        if eid in entities:
            raise DataError(f"duplicate entity id {eid}", str(entities_path), lineno)
        entities[eid] = name

    triples: List[Tuple[int, str, int]] = []
    seen = set()
    triples_path = root / TRIPLES_FILE
    df = _read_table(triples_path, 3)
    for lineno, (h, rel, t) in zip(df.index + 1, df.to_numpy(dtype=object)):
        head, tail = _parse_id(h, triples_path, lineno), _parse_id(t, triples_path, lineno)
        for eid in (head, tail):
            if eid not in entities:
                raise DataError(f"triple references undeclared entity {eid}", str(triples_path), lineno)
        triple = (head, rel, tail)
        if triple in seen:
            logger.warning(f"{triples_path}:{lineno}: dropping duplicate triple {triple}")
            continue
        seen.add(triple)
        triples.append(triple)

    attrs: List[Tuple[int, str]] = []
    attr_path = root / ATTR_FILE
    df = _read_table(attr_path, 2)
    for lineno, (e, attr) in zip(df.index + 1, df.to_numpy(dtype=object)):
        eid = _parse_id(e, attr_path, lineno)
        if eid not in entities:
            raise DataError(f"attribute references undeclared entity {eid}", str(attr_path), lineno)
        attrs.append((eid, attr))

    kg = MMKG(
        entities=entities,
        rel_triples=triples,
        attr_assignments=attrs,
        visual=_load_dense(root / DENSE_FILES["v"], entities),
        surface=_load_dense(root / DENSE_FILES["s"], entities),
        name=str(root),
    )
    kg.validate()
    logger.info(f"Loaded {root}: {kg.num_entities} entities, {len(triples)} triples, "
                f"{len(attrs)} attributes, {len(kg.visual)} visual, {len(kg.surface)} surface")
    return kg


def write_mmkg(kg: MMKG, path):
    """Write ``kg`` in the directory layout read by ``load_mmkg``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / ENTITIES_FILE).write_text(
        "".join(f"{eid}\t{name}\n" for eid, name in kg.entities.items()), encoding="utf-8")
    (root / TRIPLES_FILE).write_text(
        "".join(f"{h}\t{r}\t{t}\n" for h, r, t in kg.rel_triples), encoding="utf-8")
    (root / ATTR_FILE).write_text(
        "".join(f"{e}\t{a}\n" for e, a in kg.attr_assignments), encoding="utf-8")
    for modality, filename in DENSE_FILES.items():
        vectors = kg.dense_features(modality)
        if not vectors:
            continue
        (root / filename).write_text(
            "".join(f"{eid}\t" + "\t".join(repr(float(x)) for x in vec) + "\n" for eid, vec in vectors.items()),
            encoding="utf-8")


def load_alignments(path) -> List[Pair]:
    path = Path(path)
    df = _read_table(path, 2)
    return [(_parse_id(a, path, n), _parse_id(b, path, n))
            for n, (a, b) in zip(df.index + 1, df.to_numpy(dtype=object))]


def write_alignments(pairs: List[Pair], path):
    Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")


def load_pair(path) -> Tuple[MMKG, MMKG, List[Pair]]:
    """Load a pair directory: ``kg1/``, ``kg2/`` and ``alignments.tsv``."""
    root = Path(path)
    kg1, kg2 = load_mmkg(root / "kg1"), load_mmkg(root / "kg2")
    pairs = load_alignments(root / ALIGNMENTS_FILE)
    for lineno, (a, b) in enumerate(pairs, 1):
        if a not in kg1.entities or b not in kg2.entities:
            raise DataError(f"alignment ({a}, {b}) references an unknown entity",
                            str(root / ALIGNMENTS_FILE), lineno)
    return kg1, kg2, pairs


def write_pair(kg1: MMKG, kg2: MMKG, pairs: List[Pair], path):
    root = Path(path)
    write_mmkg(kg1, root / "kg1")
    write_mmkg(kg2, root / "kg2")
    write_alignments(pairs, root / ALIGNMENTS_FILE)
