"""Tab-delimited tables, JSON sidecars and YAML manifests.

Every table starts with a ``# mixdeconv-schema: <version>`` line, then a column
header row. Other lines starting with ``#`` are comments (mode echoes, footers)
and are skipped by the readers. Malformed input raises :class:`InputError`
carrying the file name and the 1-based line number.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .coverage import Marker, MixtureSample, StutterGraph
from .reduction import QualityRead, ReductionError, TrustedSet
from .simulator import Truth

SCHEMA_VERSION = 1
SCHEMA_LINE = f"# mixdeconv-schema: {SCHEMA_VERSION}"

COVERAGE_COLUMNS = ("marker", "sequence_id", "sequence", "repeat_count", "coverage")
PROFILE_COLUMNS = ("marker", "allele_1", "allele_2")
FREQUENCY_COLUMNS = ("marker", "sequence_id", "frequency")
STUTTER_COLUMNS = ("marker", "child_id", "parent_id", "xi")
BETA_COLUMNS = ("marker", "beta")
READ_COLUMNS = ("sequence", "quality")
TRUSTED_COLUMNS = ("marker", "sequence")


class InputError(ValueError):
    def __init__(self, path, line, message):
        self.path, self.line, self.message = str(path), line, message
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


def fmt(x) -> str:
    """Deterministic text for numbers; floats use the shortest round-trip repr."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# --- generic table plumbing ---------------------------------------------


def read_table(path, columns, optional=()):
    """Rows as dicts, each tagged with its line number under key ``_line``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(path, None, "file not found")
    rows, header = [], None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                if line.startswith("# mixdeconv-schema:"):
                    version = line.split(":", 1)[1].strip()
                    if version != str(SCHEMA_VERSION):
                        raise InputError(path, lineno, f"unsupported schema version {version!r}")
                continue
            fields = next(csv.reader([line], delimiter="\t"))
            if header is None:
                header = [f.strip() for f in fields]
                missing = [c for c in columns if c not in header and c not in optional]
                if missing:
                    raise InputError(path, lineno, f"missing column(s): {', '.join(missing)}")
                continue
            if len(fields) != len(header):
                raise InputError(path, lineno, f"expected {len(header)} fields, got {len(fields)}")
            row = dict(zip(header, (f.strip() for f in fields)))
            row["_line"] = lineno
            rows.append(row)
    if header is None:
        raise InputError(path, None, "no header row")
    return rows


def write_table(path, columns, rows, comments=(), footer=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join(fmt(v) for v in r) + "\n")
        for c in footer:
            fh.write(f"# {c}\n")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, **obj}, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(path, None, "file not found")
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as e:
        raise InputError(path, e.lineno, e.msg) from None
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise InputError(path, None, f"unsupported schema version {obj.get('schema_version')!r}")
    return obj


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _number(path, row, key, kind=float, allow_empty=False):
    v = row.get(key, "")
    if v == "" and allow_empty:
        return None
    try:
        x = kind(v)
    except ValueError:
        raise InputError(path, row["_line"], f"column {key!r}: cannot parse {v!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(x):
        raise InputError(path, row["_line"], f"column {key!r}: value must be finite")
    return x


# --- domain tables -------------------------------------------------------


def read_coverage(path) -> MixtureSample:
    rows = read_table(path, COVERAGE_COLUMNS, optional=("sequence", "repeat_count"))
    markers: dict[str, dict] = {}
    for r in rows:
        if not r["marker"] or not r["sequence_id"]:
            raise InputError(path, r["_line"], "marker and sequence_id must be non-empty")
        cov = _number(path, r, "coverage", int)
        if cov < 0:
            raise InputError(path, r["_line"], "coverage must be >= 0")
        rep = _number(path, r, "repeat_count", float, allow_empty=True) if "repeat_count" in r else None
        m = markers.setdefault(r["marker"], {"ids": [], "cov": [], "seq": [], "rep": []})
        if r["sequence_id"] in m["ids"]:
            raise InputError(path, r["_line"], f"duplicate sequence_id {r['sequence_id']!r} in marker {r['marker']!r}")
        m["ids"].append(r["sequence_id"])
        m["cov"].append(cov)
        m["seq"].append(r.get("sequence") or None)
        m["rep"].append(rep)
    if not markers:
        raise InputError(path, None, "no coverage rows")
    return MixtureSample([
        Marker(name, m["ids"], np.array(m["cov"], dtype=np.int64),
               sequences=m["seq"] if any(s is not None for s in m["seq"]) else None,
               repeat_counts=m["rep"] if any(x is not None for x in m["rep"]) else None)
        for name, m in markers.items()
    ])


def write_coverage(path, sample: MixtureSample, comments=(), footer=()):
    rows = []
    for mk in sample.markers:
        for i, sid in enumerate(mk.sequence_ids):
            seq = mk.sequences[i] if mk.sequences else ""
            rep = mk.repeat_counts[i] if mk.repeat_counts else None
            rows.append((mk.name, sid, seq, rep, int(mk.coverage[i])))
    write_table(path, COVERAGE_COLUMNS, rows, comments, footer)


def read_profile(path, sample: MixtureSample) -> list[np.ndarray]:
    """One contributor's profile as per-marker count columns (A_m x 1)."""
    rows = read_table(path, PROFILE_COLUMNS)
    out = [np.zeros((a, 1), dtype=np.int64) for a in sample.marker_sizes]
    seen = set()
    names = sample.marker_names
    for r in rows:
        if r["marker"] not in names:
            raise InputError(path, r["_line"], f"marker {r['marker']!r} is not in the coverage table")
        m = names.index(r["marker"])
        if m in seen:
            raise InputError(path, r["_line"], f"marker {r['marker']!r} listed twice")
        seen.add(m)
        for a in (r["allele_1"], r["allele_2"]):
            try:
                out[m][sample.markers[m].index(a), 0] += 1
            except ValueError:
                raise InputError(path, r["_line"], f"allele {a!r} is not a sequence of marker {r['marker']!r}") from None
    if len(seen) != len(names):
        missing = [n for i, n in enumerate(names) if i not in seen]
        raise InputError(path, None, f"no alleles for marker(s): {', '.join(missing)}")
    return out


def write_profile(path, marker_names, pairs):
    write_table(path, PROFILE_COLUMNS, [(m, a, b) for m, (a, b) in zip(marker_names, pairs)])


def read_frequencies(path) -> dict[tuple[str, str], float]:
    table = {}
    for r in read_table(path, FREQUENCY_COLUMNS):
        f = _number(path, r, "frequency")
        if not 0.0 <= f <= 1.0:
            raise InputError(path, r["_line"], "frequency must lie in [0, 1]")
        table[(r["marker"], r["sequence_id"])] = f
    return table


def write_frequencies(path, table):
    write_table(path, FREQUENCY_COLUMNS, [(m, s, f) for (m, s), f in table.items()])


def read_stutter(path, sample: MixtureSample, depth: int = 2) -> StutterGraph:
    edges: dict[str, list] = {}
    names = sample.marker_names
    for r in read_table(path, STUTTER_COLUMNS):
        if r["marker"] not in names:
            raise InputError(path, r["_line"], f"marker {r['marker']!r} is not in the coverage table")
        mk = sample.marker(r["marker"])
        try:
            child, parent = mk.index(r["child_id"]), mk.index(r["parent_id"])
        except ValueError:
            raise InputError(path, r["_line"], "child_id/parent_id must be sequences of the marker") from None
        edges.setdefault(mk.name, []).append((child, parent, _number(path, r, "xi")))
    try:
        return StutterGraph(edges, depth)
    except ValueError as e:
        raise InputError(path, None, str(e)) from None


def write_stutter(path, sample: MixtureSample, graph: StutterGraph):
    rows = []
    for mk in sample.markers:
        for child, parent, xi in graph.marker_edges(mk.name):
            rows.append((mk.name, mk.sequence_ids[child], mk.sequence_ids[parent], xi))
    write_table(path, STUTTER_COLUMNS, rows)


def read_beta(path, sample: MixtureSample) -> np.ndarray:
    vals = {}
    for r in read_table(path, BETA_COLUMNS):
        b = _number(path, r, "beta")
        if b <= 0:
            raise InputError(path, r["_line"], "beta must be > 0")
        vals[r["marker"]] = b
    missing = [n for n in sample.marker_names if n not in vals]
    if missing:
        raise InputError(path, None, f"no beta for marker(s): {', '.join(missing)}")
    return np.array([vals[n] for n in sample.marker_names])


def write_truth(path, truth: Truth, marker_names, extra=None):
    write_json(path, {
        "phi": truth.phi, "nu": truth.nu, "gamma": truth.gamma,
        "beta": dict(zip(marker_names, truth.beta.tolist())),
        "profiles": [
            {m: list(pair) for m, pair in zip(marker_names, prof)} for prof in truth.profiles
        ],
        "labels": {f"{m}\t{s}": lab for (m, s), lab in truth.labels.items()},
        **(extra or {}),
    })


def read_truth_profiles(path, sample: MixtureSample):
    """Profiles per contributor as marker -> (allele, allele), ordered like the sample."""
    obj = read_json(path)
    out = []
    for c, prof in enumerate(obj.get("profiles", [])):
        try:
            out.append([tuple(prof[m]) for m in sample.marker_names])
        except KeyError as e:
            raise InputError(path, None, f"contributor {c}: no profile for marker {e.args[0]!r}") from None
    return obj, out


def read_reads(path, coverage: MixtureSample):
    """Sequence/quality lines joined to the coverage table by sequence string."""
    rows = read_table(path, READ_COLUMNS)
    by_seq = {}
    for mk in coverage.markers:
        for i, s in enumerate(mk.sequences or []):
            if s:
                by_seq[s.upper()] = (mk.name, mk.sequence_ids[i], int(mk.coverage[i]))
    grouped: dict[str, list] = {}
    for r in rows:
        seq = r["sequence"].upper()
        if seq not in by_seq:
            raise InputError(path, r["_line"], "sequence is not in the coverage table")
        if len(r["quality"]) != len(seq):
            raise InputError(path, r["_line"], "sequence and quality lengths differ")
        try:
            q = QualityRead.from_phred_string(seq, r["quality"], marker=by_seq[seq][0])
        except (ReductionError, UnicodeEncodeError) as e:
            raise InputError(path, r["_line"], str(e)) from None
        grouped.setdefault(seq, []).append(q.qualities)
    reads = []
    for mk in coverage.markers:
        for i, s in enumerate(mk.sequences or []):
            if not s:
                raise InputError(path, None, f"marker {mk.name}: sequence {mk.sequence_ids[i]!r} has no bases")
            qs = grouped.get(s.upper())
            if qs is None:
                raise InputError(path, None, f"no quality line for {mk.name} {mk.sequence_ids[i]!r}")
            q = np.floor(np.median(np.stack(qs), axis=0) + 0.5).astype(np.int64)
            reads.append(QualityRead(s, q, mk.name, int(mk.coverage[i]), mk.sequence_ids[i]))
    return reads


def read_trusted(path) -> TrustedSet:
    out: dict[str, set] = {}
    for r in read_table(path, TRUSTED_COLUMNS):
        if not set(r["sequence"].upper()) <= set("ACGT"):
            raise InputError(path, r["_line"], "trusted sequences must use A, C, G, T only")
        out.setdefault(r["marker"], set()).add(r["sequence"])
    return TrustedSet(out)


# --- manifests -----------------------------------------------------------


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(path, None, "file not found")
    try:
        with open(path) as fh:
            obj = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        line = getattr(getattr(e, "problem_mark", None), "line", None)
        raise InputError(path, None if line is None else line + 1, "invalid YAML") from None
    if not isinstance(obj, dict):
        raise InputError(path, None, "manifest must be a mapping")
    version = obj.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InputError(path, None, f"unsupported schema version {version!r}")
    obj["_dir"] = path.parent
    obj["_path"] = path
    return obj


def write_manifest(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump({"schema_version": SCHEMA_VERSION, **obj}, fh, sort_keys=False)
