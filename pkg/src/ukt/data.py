"""Interaction-log loading, KC expansion, filtering, and fold planning.

Two on-disk layouts are supported:

* ``csv-flat``: one interaction per line with header
  ``student_id,question_id,kc_ids,response,timestamp``; ``kc_ids`` is an
  underscore-joined list (``12_37``), response is 0/1, UTF-8, LF endings.
* ``csv-grouped``: per-student blocks of three comma-separated rows
  (question ids, KC ids, responses); multi-KC entries are underscore-joined
  inside the KC row. Students are numbered by block order.

Raw string ids are mapped to dense integers in first-seen order. Dense id 0
is reserved for "unknown" so evaluation-time vocabulary drift maps to a
neutral token instead of crashing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ParseError

FLAT_HEADER = ["student_id", "question_id", "kc_ids", "response", "timestamp"]

UNKNOWN_ID = 0


@dataclass(frozen=True)
class Interaction:
    """One response event: question, its KC set, correctness, ordinal time."""

    question_id: int
    kc_ids: tuple[int, ...]
    response: int
    time_index: int
    timestamp: float | None = None  # wall clock, parsed but unused by the model

    def __post_init__(self):
        if self.response not in (0, 1):
            raise DataError(f"response must be 0 or 1, got {self.response}")
        if not self.kc_ids:
            raise DataError("interaction must carry at least one KC")


@dataclass
class StudentSequence:
    student_id: int
    interactions: list[Interaction]

    def __len__(self) -> int:
        return len(self.interactions)

    @property
    def responses(self) -> list[int]:
        return [it.response for it in self.interactions]


class Vocab:
    """First-seen-order dense ids; id 0 is the reserved unknown token."""

    def __init__(self):
        self._ids: dict[str, int] = {}

    def add(self, raw: str) -> int:
        dense = self._ids.get(raw)
        if dense is None:
            dense = len(self._ids) + 1
            self._ids[raw] = dense
        return dense

    def get(self, raw: str) -> int:
        return self._ids.get(raw, UNKNOWN_ID)

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def size(self) -> int:
        """Table size including the reserved unknown slot."""
        return len(self._ids) + 1

    def raw_of(self) -> dict[int, str]:
        return {dense: raw for raw, dense in self._ids.items()}


@dataclass
class DatasetBundle:
    sequences: list[StudentSequence]
    kc_vocab: Vocab = field(default_factory=Vocab)
    question_vocab: Vocab = field(default_factory=Vocab)

    @property
    def num_kcs(self) -> int:
        return self.kc_vocab.size

    @property
    def num_questions(self) -> int:
        return self.question_vocab.size

    @property
    def num_students(self) -> int:
        return len({s.student_id for s in self.sequences})

    @property
    def num_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    def with_sequences(self, sequences: list[StudentSequence]) -> "DatasetBundle":
        return DatasetBundle(sequences, self.kc_vocab, self.question_vocab)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_response(token: str, lineno: int) -> int:
    token = token.strip()
    if token == "1":
        return 1
    if token == "0":
        return 0
    raise DataError(f"line {lineno}: unknown response token {token!r}")


def _parse_kcs(token: str, vocab: Vocab, lineno: int) -> tuple[int, ...]:
    parts = [p for p in token.strip().split("_") if p]
    if not parts:
        raise ParseError(f"line {lineno}: empty KC list")
    return tuple(vocab.add(p) for p in parts)


def parse_interaction_log(path, format: str = "csv-flat") -> DatasetBundle:
    """Read an interaction log into a bundle with dense first-seen ids."""
    if format == "csv-flat":
        return _parse_flat(path)
    if format == "csv-grouped":
        return _parse_grouped(path)
    raise ConfigError(f"unknown log format {format!r}")


def _parse_flat(path) -> DatasetBundle:
    bundle = DatasetBundle(sequences=[])
    by_student: dict[int, StudentSequence] = {}
    student_vocab = Vocab()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return bundle  # empty file -> empty bundle
        if [h.strip() for h in header] != FLAT_HEADER:
            raise ParseError(f"line 1: expected header {','.join(FLAT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ParseError(f"line {lineno}: expected 5 fields, got {len(row)}")
            raw_student, raw_q, raw_kcs, raw_resp, raw_ts = row
            sid = student_vocab.add(raw_student.strip())
            seq = by_student.get(sid)
            if seq is None:
                seq = StudentSequence(student_id=sid, interactions=[])
                by_student[sid] = seq
                bundle.sequences.append(seq)
            try:
                ts = float(raw_ts) if raw_ts.strip() else None
            except ValueError:
                raise ParseError(f"line {lineno}: bad timestamp {raw_ts!r}")
            seq.interactions.append(
                Interaction(
                    question_id=bundle.question_vocab.add(raw_q.strip()),
                    kc_ids=_parse_kcs(raw_kcs, bundle.kc_vocab, lineno),
                    response=_parse_response(raw_resp, lineno),
                    time_index=len(seq.interactions),
                    timestamp=ts,
                )
            )
    return bundle


def _parse_grouped(path) -> DatasetBundle:
    with open(path, encoding="utf-8") as fh:
        lines = [(i + 1, ln.rstrip("\n")) for i, ln in enumerate(fh)]
    lines = [(no, ln) for no, ln in lines if ln.strip()]
    if len(lines) % 3 != 0:
        raise ParseError(
            f"line {lines[-1][0]}: grouped file must hold blocks of 3 rows, "
            f"got {len(lines)} nonempty rows"
        )
    bundle = DatasetBundle(sequences=[])
    for block, pos in enumerate(range(0, len(lines), 3)):
        (q_no, q_row), (k_no, k_row), (r_no, r_row) = lines[pos : pos + 3]
        qs = [t.strip() for t in q_row.split(",")]
        kcs = [t.strip() for t in k_row.split(",")]
        rs = [t.strip() for t in r_row.split(",")]
        if not len(qs) == len(kcs) == len(rs):
            raise ParseError(
                f"line {q_no}: block rows disagree in length "
                f"({len(qs)}, {len(kcs)}, {len(rs)})"
            )
        seq = StudentSequence(student_id=block + 1, interactions=[])
        for t, (q, kc, r) in enumerate(zip(qs, kcs, rs)):
            seq.interactions.append(
                Interaction(
                    question_id=bundle.question_vocab.add(q),
                    kc_ids=_parse_kcs(kc, bundle.kc_vocab, k_no),
                    response=_parse_response(r, r_no),
                    time_index=t,
                )
            )
        bundle.sequences.append(seq)
    return bundle


def write_csv_flat(bundle: DatasetBundle, path) -> None:
    """Emit the bundle in the csv-flat layout (LF endings, UTF-8)."""
    kc_raw = bundle.kc_vocab.raw_of()
    q_raw = bundle.question_vocab.raw_of()
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(FLAT_HEADER) + "\n")
        for seq in bundle.sequences:
            for it in seq.interactions:
                kcs = "_".join(kc_raw.get(k, str(k)) for k in it.kc_ids)
                q = q_raw.get(it.question_id, str(it.question_id))
                ts = "" if it.timestamp is None else repr(it.timestamp)
                fh.write(f"{seq.student_id},{q},{kcs},{it.response},{ts}\n")


# ---------------------------------------------------------------------------
# pipeline transforms
# ---------------------------------------------------------------------------

def expand_by_kc(bundle: DatasetBundle) -> DatasetBundle:
    """Split each multi-KC interaction into one interaction per KC.

    Expansion is stable: KCs are visited in sorted id order, the original
    interaction order is preserved, and question/response are shared.
    """
    out = []
    for seq in bundle.sequences:
        expanded = []
        for it in seq.interactions:
            for kc in sorted(it.kc_ids):
                expanded.append(replace(it, kc_ids=(kc,)))
        out.append(StudentSequence(seq.student_id, expanded))
    return bundle.with_sequences(out)


def preprocess_sequences(
    bundle: DatasetBundle, min_len: int = 3, max_len: int = 200
) -> DatasetBundle:
    """Drop sequences shorter than min_len; chunk longer ones at max_len.

    The final partial chunk survives only if it still reaches min_len.
    Padding is a batching concern and happens downstream via masks.
    """
    if min_len < 1:
        raise ConfigError(f"min_len must be >= 1, got {min_len}")
    out = []
    for seq in bundle.sequences:
        if len(seq) < min_len:
            continue
        for start in range(0, len(seq), max_len):
            chunk = seq.interactions[start : start + max_len]
            if len(chunk) >= min_len:
                out.append(StudentSequence(seq.student_id, chunk))
    return bundle.with_sequences(out)


def prepare(bundle: DatasetBundle, min_len: int = 3, max_len: int = 200) -> DatasetBundle:
    """Standard order: expand to KC level first, then filter/chunk."""
    return preprocess_sequences(expand_by_kc(bundle), min_len=min_len, max_len=max_len)


# ---------------------------------------------------------------------------
# fold planning
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    """Student-level test split plus a k-fold partition of the rest."""

    bundle: DatasetBundle
    test_students: list[int]
    folds: list[list[int]]
    seed: int

    def _by_student(self, wanted: set[int]) -> list[StudentSequence]:
        return [s for s in self.bundle.sequences if s.student_id in wanted]

    def test_sequences(self) -> list[StudentSequence]:
        return self._by_student(set(self.test_students))

    def val_sequences(self, fold: int) -> list[StudentSequence]:
        return self._by_student(set(self.folds[fold]))

    def train_sequences(self, fold: int) -> list[StudentSequence]:
        wanted = set()
        for i, members in enumerate(self.folds):
            if i != fold:
                wanted.update(members)
        return self._by_student(wanted)


def split_folds(
    bundle: DatasetBundle, test_fraction: float = 0.2, k: int = 5, seed: int = 0
) -> FoldPlan:
    """Shuffle students by seed, carve off the test share, k-fold the rest."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    students = sorted({s.student_id for s in bundle.sequences})
    rng = np.random.default_rng(seed)
    order = [students[i] for i in rng.permutation(len(students))]
    n_test = int(round(len(order) * test_fraction))
    test, rest = order[:n_test], order[n_test:]
    if len(rest) < k:
        raise ConfigError(f"{len(rest)} training students cannot fill {k} folds")
    folds = [list(part) for part in np.array_split(np.array(rest), k)]
    return FoldPlan(bundle=bundle, test_students=test, folds=folds, seed=seed)
