"""Exact dense retrieval over a flat embedding index.

The index holds one row per document, embedding `title + " " + text`. Search
is a full dot product against every row followed by top-K selection, so the
result is exact: scores descending, ties broken by ascending document id.
"""

from __future__ import annotations

import logging
import random
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bm25
from .data import Document, ExamplePool, Query
from .embedder import EmbedderParams, embed
from .errors import BadMagic, DimMismatch, EmptyCorpus, MalformedRow, Truncated, VersionMismatch
from .prompt import FormatKind, PromptFormat, render_inst, render_inst_ic
from .trainer import SelectionPolicy, select_examples

log = logging.getLogger(__name__)

MAGIC = b"RFI1"
VERSION = 1


@dataclass
class FlatIndex:
    ids: list[str]
    matrix: np.ndarray  # (n, dim) float64, rows unit norm or zero
    dim: int
    _ids_arr: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    def ids_array(self) -> np.ndarray:
        if self._ids_arr is None:
            self._ids_arr = np.array(self.ids)
        return self._ids_arr


def document_text(doc: Document) -> str:
    return doc.title + " " + doc.text


def build_flat_index(corpus: dict[str, Document], params: EmbedderParams, threads: int = 1) -> FlatIndex:
    """Embed every document, rows in corpus iteration order."""
    if not corpus:
        raise EmptyCorpus("cannot index an empty corpus")
    docs = list(corpus.values())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda d: embed(params, document_text(d)), docs))
    else:
        rows = [embed(params, document_text(d)) for d in docs]
    matrix = np.stack(rows)
    return FlatIndex(ids=[d.id for d in docs], matrix=matrix, dim=params.embed_dim)


def search(index: FlatIndex, q_emb: np.ndarray, top_k: int) -> list[tuple[str, float]]:
    """Exact top-K by dot product; ties and the all-zero case order by doc id."""
    if q_emb.shape != (index.dim,):
        raise DimMismatch(f"query dim {q_emb.shape} does not match index dim ({index.dim},)")
    if top_k <= 0:
        return []
    scores = index.matrix @ q_emb
    if not np.any(scores):
        log.warning("query embedding is all zeros; ranking by document id")
    order = np.lexsort((index.ids_array(), -scores))
    top = order[: min(top_k, len(index.ids))]
    return [(index.ids[i], float(scores[i])) for i in top]


def run_inference(
    queries: list[Query],
    instruction: str,
    pool: ExamplePool | None,
    ic_index: bm25.Bm25Index | None,
    index: FlatIndex,
    params: EmbedderParams,
    fmt: PromptFormat,
    k: int,
    top_k: int,
    selection: SelectionPolicy = SelectionPolicy.RETRIEVED,
    seed: int = 0,
) -> dict[str, list[tuple[str, float]]]:
    """Augment, embed and search every query; returns qid -> ranked list.

    With fmt.kind == INST or k == 0 the example pool is never consulted, so
    `pool` and `ic_index` may be None in that case.
    """
    uses_examples = fmt.kind is not FormatKind.INST and k > 0
    if uses_examples and (pool is None or ic_index is None):
        raise ValueError("this format needs an example pool and its BM25 index")
    rng = random.Random(f"{seed}:eval-select")
    run: dict[str, list[tuple[str, float]]] = {}
    for query in queries:
        if uses_examples:
            examples = select_examples(pool, ic_index, query.text, k, selection, rng)
            aug = render_inst_ic(instruction, examples, query.text, fmt)
        else:
            aug = render_inst(instruction, query.text, fmt.bracket_queries)
        run[query.id] = search(index, embed(params, aug.text), top_k)
    return run


def write_run(run: dict[str, list[tuple[str, float]]], path: str | Path, tag: str = "rare") -> None:
    """Write a TREC run file: qid Q0 docid rank score tag."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, ranked in run.items():
            for rank, (doc_id, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def load_run(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list[tuple[str, float]]] = {}
    p = Path(path)
    with p.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise MalformedRow(str(p), line_no, f"expected 6 fields, got {len(fields)}")
            qid, _, doc_id, _, score, _ = fields
            try:
                run.setdefault(qid, []).append((doc_id, float(score)))
            except ValueError:
                raise MalformedRow(str(p), line_no, f"score {score!r} is not a number") from None
    return run


def save_index(index: FlatIndex, path: str | Path) -> None:
    """Serialize: magic RFI1, u32 version, u64 n, u64 dim, ids, row-major float64."""
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<QQ", len(index.ids), index.dim))
        for doc_id in index.ids:
            raw = doc_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f8").tobytes())


def load_flat_index(path: str | Path) -> FlatIndex:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise Truncated(f"{path}: expected {n} more bytes at offset {pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    magic = take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise VersionMismatch(f"{path}: unsupported index version {version}")
    n, dim = struct.unpack("<QQ", take(16))
    ids = []
    for _ in range(n):
        (id_len,) = struct.unpack("<I", take(4))
        ids.append(take(id_len).decode("utf-8"))
    matrix = np.frombuffer(take(8 * n * dim), dtype="<f8").reshape(n, dim).copy()
    return FlatIndex(ids=ids, matrix=matrix, dim=int(dim))
