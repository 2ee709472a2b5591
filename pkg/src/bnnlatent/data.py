"""Datasets and run configuration.

Covers the noisy-sphere simulation, CSV ingestion for tabular data such as
the UCI E. coli, user-knowledge and banknote sets, and the named run
presets used by the CLI.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .anchors import LLEConfig
from .errors import MissingValue, ParseError
from .sampler import NutsConfig

MISSING_TOKENS = {"", "?", "na", "nan", "null"}


@dataclass
class Dataset:
    Y: np.ndarray
    labels: Optional[np.ndarray] = None
    columns: list = field(default_factory=list)
    provenance: str = ""
    class_names: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_csv(self, path) -> None:
        header = list(self.columns) or [f"y{j}" for j in range(self.p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.labels is not None:
                w.writerow(header + ["label"])
                for row, lab in zip(self.Y, self.labels):
                    w.writerow([repr(float(v)) for v in row] + [self.class_names[lab]])
            else:
                w.writerow(header)
                for row in self.Y:
                    w.writerow([repr(float(v)) for v in row])


def pairwise_chordal(P: np.ndarray) -> np.ndarray:
    diff = P[:, None, :] - P[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def simulate_hypersphere(N: int = 640, noise_sd: float = 0.05, seed: int = 0, truth: str = "chordal"):
    """Noisy points on the unit 2-sphere in R^3.

    Returns ``(dataset, sphere_points, true_distances)``. ``sphere_points``
    are the noiseless positions; true distances are chordal (straight-line)
    between them, or great-circle with ``truth="geodesic"``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((N, 3))
    P = G / np.linalg.norm(G, axis=1, keepdims=True)
    Y = P + noise_sd * rng.standard_normal((N, 3)) if noise_sd > 0 else P.copy()
    if truth == "chordal":
        D = pairwise_chordal(P)
    elif truth == "geodesic":
        D = np.arccos(np.clip(P @ P.T, -1.0, 1.0))
        np.fill_diagonal(D, 0.0)
    else:
        raise ValueError(f"truth must be 'chordal' or 'geodesic', got {truth!r}")
    ds = Dataset(Y, None, ["y0", "y1", "y2"], f"hypersphere(N={N}, noise_sd={noise_sd}, seed={seed})")
    return ds, P, D


def _parse_float(tok: str, row: int, col: str) -> float:
    if tok.strip().lower() in MISSING_TOKENS:
        raise MissingValue("missing value", row=row, column=col)
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"cannot parse {tok!r} as a number", row=row, column=col) from None


def load_csv(path, label_column=None, standardize: bool = True, drop_columns=()) -> Dataset:
    """Read a header-row, comma-separated numeric table.

    Columns are always centred; ``standardize`` also scales them to unit
    variance. ``label_column`` (name or index) is mapped to integer codes
    in sorted order of the distinct labels. ``drop_columns`` lists
    non-numeric identifier columns to ignore.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if isinstance(label_column, int):
        label_column = header[label_column]
    if label_column is not None and label_column not in header:
        raise ParseError(f"label column {label_column!r} not in header {header}")
    drop = set(drop_columns)
    feat_cols = [j for j, h in enumerate(header) if h != label_column and h not in drop]
    lab_col = header.index(label_column) if label_column is not None else None

    values, raw_labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not t.strip() for t in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=r)
        values.append([_parse_float(row[j], r, header[j]) for j in feat_cols])
        if lab_col is not None:
            lab = row[lab_col].strip()
            if lab.lower() in MISSING_TOKENS:
                raise MissingValue("missing label", row=r, column=label_column)
            raw_labels.append(lab)
    Y = np.asarray(values, dtype=float)
    if Y.size == 0:
        raise ParseError(f"{path} has no data rows")
    Y = Y - Y.mean(axis=0)
    if standardize:
        sd = Y.std(axis=0)
        Y = Y / np.where(sd > 0, sd, 1.0)
    labels, class_names = None, []
    if lab_col is not None:
        class_names = sorted(set(raw_labels), key=_label_sort_key)
        code = {c: i for i, c in enumerate(class_names)}
        labels = np.array([code[c] for c in raw_labels], dtype=int)
    return Dataset(Y, labels, [header[j] for j in feat_cols], f"csv:{path.name}", class_names)


def _label_sort_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


@dataclass
class RunConfig:
    """Everything needed to reproduce one pipeline run."""

    name: str = "custom"
    data: str = "sphere"  # "sphere" or a CSV path
    label_column: Optional[str] = None
    standardize: bool = False
    n: int = 640
    noise_sd: float = 0.05
    truth: str = "chordal"
    p: int = 3
    q: int = 2
    h: int = 10
    n_ref: Optional[int] = 40
    constrain: bool = True
    lle_scope: str = "anchors"
    n_neighbors: int = 5
    ridge: float = 1e-3
    latent_prior: str = "normal"
    n_clusters: Optional[int] = None
    thin: int = 1
    n_pairs: int = 6
    seed: int = 0
    expected_n: Optional[int] = None
    sampler: NutsConfig = field(default_factory=NutsConfig)

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = NutsConfig(**self.sampler)
        if not 1 <= self.q < self.p:
            raise ValueError(f"need 1 <= q < p, got q={self.q}, p={self.p}")
        if self.n_ref is not None and self.data == "sphere" and not 0 < self.n_ref < self.n:
            raise ValueError(f"need 0 < n_ref < N, got n_ref={self.n_ref}, N={self.n}")

    @property
    def anchors(self) -> bool:
        return self.n_ref is not None and self.n_ref > 0

    def lle_config(self) -> LLEConfig:
        return LLEConfig(self.n_neighbors, self.ridge, self.q)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kw) -> "RunConfig":
        d = self.to_dict()
        sampler = dict(d.pop("sampler"))
        sampler.update(kw.pop("sampler", {}))
        d.update(kw)
        d["sampler"] = sampler
        return RunConfig.from_dict(d)


def paper_configs() -> dict:
    """Named presets for the sphere study and the three UCI datasets.

    Sphere arms: column constraint without anchors, anchors (40 or 120)
    without the constraint, and both together.
    """
    sphere = dict(data="sphere", n=640, p=3, q=2, h=10, standardize=False, expected_n=640)
    uci = dict(standardize=True, label_column="class")
    return {
        "sphere": RunConfig(name="sphere", n_ref=40, constrain=True, **sphere),
        "sphere_constraint_only": RunConfig(name="sphere_constraint_only", n_ref=None, constrain=True, **sphere),
        "sphere_anchors40": RunConfig(name="sphere_anchors40", n_ref=40, constrain=False, **sphere),
        "sphere_anchors120": RunConfig(name="sphere_anchors120", n_ref=120, constrain=False, **sphere),
        "ecoli": RunConfig(name="ecoli", data="ecoli.csv", p=7, q=1, h=5, n_ref=20, n_clusters=8, expected_n=336, **uci),
        "knowledge": RunConfig(
            name="knowledge", data="knowledge.csv", p=5, q=1, h=10, n_ref=15, n_clusters=4, expected_n=257, **uci
        ),
        "banknote": RunConfig(
            name="banknote", data="banknote.csv", p=4, q=2, h=20, n_ref=80, n_clusters=2, expected_n=1371, **uci
        ),
    }
