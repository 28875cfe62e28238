"""Reading and writing datasets, graphs, parameters, posteriors and manifests."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .graph import Admg, Pag, Skeleton
from .simulate import Dataset, ScmParams


class FormatError(ValueError):
    pass


def write_csv(data: Dataset, path) -> None:
    """Header row of column names, then one row per sample with ``repr`` floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.column_names)
        for row in data.X:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> Dataset:
    """Strict numeric CSV with a header row; any non-numeric cell is an error."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or any(h == "" for h in header):
        raise FormatError(f"{path}: missing or blank header")
    if all(_is_number(h) for h in header):
        raise FormatError(f"{path}: a header row of column names is required")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    X = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(header)}")
        for j, cell in enumerate(r):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell {cell!r} at row {i + 2}, column {header[j]!r}") from None
            if not np.isfinite(v):
                raise FormatError(f"{path}: non-finite cell {cell!r} at row {i + 2}, column {header[j]!r}")
            X[i, j] = v
    return Dataset(X, header)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None


def write_graph(g: Admg, path) -> None:
    _dump(g.to_dict(), path)


def read_graph(path) -> Admg:
    return Admg.from_dict(_load(path))


def write_pag(p: Pag, path) -> None:
    _dump(p.to_dict(), path)


def read_pag(path) -> Pag:
    return Pag.from_dict(_load(path))


def write_params(p: ScmParams, path) -> None:
    _dump(p.to_dict(), path)


def read_params(path) -> ScmParams:
    return ScmParams.from_dict(_load(path))


def write_skeleton(s: Skeleton, path) -> None:
    S = np.asarray(s.S, dtype=bool)
    _dump({"d": int(S.shape[0]), "edges": [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(S, 1)))]}, path)


def read_skeleton(path) -> Skeleton:
    obj = _load(path)
    S = np.zeros((obj["d"], obj["d"]), dtype=bool)
    for i, j in obj["edges"]:
        S[i, j] = S[j, i] = True
    return Skeleton(S)


def write_posterior(p, path) -> None:
    """JSON for ``.json`` paths, otherwise a headerless CSV matrix."""
    P = np.asarray(getattr(p, "p", p), dtype=float)
    if str(path).endswith(".json"):
        _dump({"d": int(P.shape[0]), "p": P.tolist()}, path)
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in P:
                w.writerow([repr(float(v)) for v in row])


def read_posterior(path):
    from .posterior.cascade import SkeletonPosterior

    if str(path).endswith(".json"):
        return SkeletonPosterior.from_dict(_load(path))
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        P = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return SkeletonPosterior(P)


def write_manifest(obj: dict, path) -> None:
    _dump(obj, path)


def read_manifest(path) -> dict:
    return _load(path)


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


MODEL_DIR_ENV = "SPOTMAG_MODEL_DIR"


def default_model_dir() -> Path:
    return Path(os.environ.get(MODEL_DIR_ENV, Path.home() / ".spotmag" / "models"))
