"""Plain-text model archives.

Layout (UTF-8, ``\\n`` line endings)::

    TRANSTAREC 1
    [header]
    dim 2
    margin 1.0
    ...
    [users]
    <one user id per line, index order>
    [pois]
    <one POI id per line, index order>
    [tensor user_emb 2 2]
    <one row per line, values as 17-significant-digit decimals>
    ...
    [end]

Vectors are written as ``[tensor g_bias 2]`` followed by a single line.
Floats use 17 significant digits, which round-trips every float64 exactly,
so ``save(load(path))`` reproduces the file byte for byte.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import BadMagic, IoError, ParseError, ShapeMismatch, UnsupportedVersion
from .model import HyperParams, ModelParams, param_shapes

MAGIC = "TRANSTAREC"
FORMAT_VERSION = 1

_HEADER_FIELDS = (
    "dim",
    "margin",
    "soft_c",
    "epsilon",
    "rank_mode",
    "baseline_mode",
    "n_users",
    "n_pois",
    "seed",
    "epochs",
    "final_loss",
)


@dataclass
class ModelArchive:
    hyper: HyperParams
    users: tuple[str, ...]
    pois: tuple[str, ...]
    params: ModelParams
    seed: int = 0
    epochs: int = 0
    final_loss: float = float("nan")
    format_version: int = FORMAT_VERSION

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelArchive):
            return NotImplemented
        same_loss = self.final_loss == other.final_loss or (
            np.isnan(self.final_loss) and np.isnan(other.final_loss)
        )
        return (
            self.hyper == other.hyper
            and self.users == other.users
            and self.pois == other.pois
            and self.seed == other.seed
            and self.epochs == other.epochs
            and same_loss
            and self.format_version == other.format_version
            and all(np.array_equal(a, b) for a, b in zip(self.params.tensors().values(), other.params.tensors().values()))
        )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(archive: ModelArchive) -> str:
    p, h = archive.params, archive.hyper
    if len(archive.users) != p.n_users or len(archive.pois) != p.n_pois:
        raise ShapeMismatch("vocabulary sizes do not match embedding tables")
    out = [f"{MAGIC} {archive.format_version}", "[header]"]
    values = {
        "dim": str(h.dim),
        "margin": _fmt(h.margin),
        "soft_c": _fmt(h.soft_c),
        "epsilon": _fmt(h.epsilon),
        "rank_mode": h.rank_mode,
        "baseline_mode": str(int(h.baseline_mode)),
        "n_users": str(p.n_users),
        "n_pois": str(p.n_pois),
        "seed": str(archive.seed),
        "epochs": str(archive.epochs),
        "final_loss": _fmt(archive.final_loss),
    }
    out.extend(f"{k} {values[k]}" for k in _HEADER_FIELDS)
    out.append("[users]")
    out.extend(archive.users)
    out.append("[pois]")
    out.extend(archive.pois)
    for name, arr in p.tensors().items():
        out.append(f"[tensor {name} {' '.join(str(s) for s in arr.shape)}]")
        rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
        out.extend(" ".join(_fmt(x) for x in row) for row in rows)
    out.append("[end]")
    return "\n".join(out) + "\n"


def save(archive: ModelArchive, path: str | Path) -> None:
    """Write ``archive`` atomically (temporary file in the target directory, then rename)."""
    text = dumps(archive)
    path = Path(path)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent if str(path.parent) else ".")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise IoError(f"cannot write model archive {path}: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


class _Lines:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def next(self, section: str) -> str:
        if self.pos >= len(self.lines):
            raise ShapeMismatch(f"unexpected end of file in section [{section}]")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def __iter__(self) -> Iterator[str]:
        return self


def _expect(lines: _Lines, literal: str, section: str) -> None:
    line = lines.next(section)
    if line != literal:
        raise ParseError(f"expected {literal!r}, found {line!r}", lines.pos)


def loads(text: str) -> ModelArchive:
    lines = _Lines(text.split("\n"))
    first = lines.next("magic")
    parts = first.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise BadMagic(f"not a model archive (first line {first[:40]!r})")
    try:
        version = int(parts[1])
    except ValueError as exc:
        raise ParseError(f"bad version {parts[1]!r}", 1) from exc
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"archive format version {version}; this reader supports {FORMAT_VERSION}")

    _expect(lines, "[header]", "header")
    header: dict[str, str] = {}
    for key in _HEADER_FIELDS:
        line = lines.next("header")
        k, _, v = line.partition(" ")
        if k != key or not v:
            raise ParseError(f"expected header field {key!r}, found {line!r}", lines.pos)
        header[key] = v

    def conv(key: str, fn):
        try:
            return fn(header[key])
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {header[key]!r}", 2 + _HEADER_FIELDS.index(key) + 1) from exc

    n_users, n_pois, dim = conv("n_users", int), conv("n_pois", int), conv("dim", int)
    try:
        hyper = HyperParams(
            dim=dim,
            margin=conv("margin", float),
            soft_c=conv("soft_c", float),
            epsilon=conv("epsilon", float),
            rank_mode=header["rank_mode"],
            baseline_mode=bool(conv("baseline_mode", int)),
        )
    except ValueError as exc:
        raise ParseError(f"invalid hyperparameters: {exc}") from exc

    _expect(lines, "[users]", "users")
    users = tuple(lines.next("users") for _ in range(n_users))
    _expect(lines, "[pois]", "pois")
    pois = tuple(lines.next("pois") for _ in range(n_pois))

    expected = param_shapes(n_users, n_pois, dim)

    tensors = {}
    previous = "pois"
    for name in ModelParams.names():
        shape = expected[name]
        head = lines.next(name)
        want = f"[tensor {name} {' '.join(str(s) for s in shape)}]"
        if head != want:
            if head.startswith(f"[tensor {name} "):
                raise ShapeMismatch(f"section [{name}] declares {head!r}, expected {want!r}")
            if head and not head.startswith("["):
                raise ShapeMismatch(f"section [{previous}] has extra rows (line {lines.pos})")
            raise ParseError(f"expected {want!r}, found {head!r}", lines.pos)
        previous = name
        n_rows = 1 if len(shape) == 1 else shape[0]
        width = shape[-1]
        arr = np.empty((n_rows, width))
        for r in range(n_rows):
            line = lines.next(name)
            if line.startswith("[") or not line:
                raise ShapeMismatch(f"section [{name}] has {r} rows, expected {n_rows}")
            fields = line.split(" ")
            if len(fields) != width:
                raise ShapeMismatch(f"section [{name}] row {r} has {len(fields)} values, expected {width} (line {lines.pos})")
            try:
                arr[r] = [float(x) for x in fields]
            except ValueError as exc:
                raise ParseError(f"bad number in section [{name}]: {exc}", lines.pos) from exc
        tensors[name] = arr.reshape(shape)
    nxt = lines.next("end")
    if nxt != "[end]":
        if nxt and not nxt.startswith("["):
            raise ShapeMismatch(f"section [{previous}] has extra rows (line {lines.pos})")
        raise ParseError(f"expected '[end]', found {nxt!r}", lines.pos)

    params = ModelParams(**tensors)
    if not all(np.all(np.isfinite(a)) for a in tensors.values()):
        raise ParseError("non-finite tensor values")
    return ModelArchive(
        hyper=hyper,
        users=users,
        pois=pois,
        params=params,
        seed=conv("seed", int),
        epochs=conv("epochs", int),
        final_loss=conv("final_loss", float),
        format_version=version,
    )


def load(path: str | Path) -> ModelArchive:
    """Read and validate an archive written by :func:`save`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise IoError(f"cannot read model archive {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise BadMagic(f"{path} is not a text model archive") from exc
    return loads(text)
