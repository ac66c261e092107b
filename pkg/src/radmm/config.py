"""Run configuration: a flat ``key = value`` text format with dotted sections.

Example::

    algorithm = radmm
    K = 150
    graph.n = 5
    graph.p = 0.5
    graph.seed = 3
    data.source = synthetic
    data.n = 250
    data.d = 5
    params.C = 1
    params.rho = 0.1
    eta = 0.5
    gamma = exponential(1.01, 0.2)

``#`` starts a comment. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from . import dataset as ds
from .engine import ALGORITHMS, Exponential, Schedule
from .objective import ErmParams
from .topology import Graph, build_graph, parse_edge_list, random_connected_graph, read_edge_file

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_kv_text",
    "read_kv_file",
    "parse_schedule",
    "load_config",
    "input_hash",
    "git_blob_sha1",
    "run_seed",
]


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"given twice ({source}:{lineno})")
        out[key] = value
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv_text(path.read_text(), str(path))


_EXP_RE = re.compile(r"^exp(?:onential)?\(\s*([^,\s]+)\s*(?:,\s*([^)\s]+)\s*)?\)$")


def parse_schedule(key: str, text: str, allow_zero: bool = False) -> float | Exponential:
    """``"0.5"`` or ``"exponential(base, scale)"`` (scale defaults to 1)."""
    m = _EXP_RE.match(text.strip())
    try:
        if m:
            return Exponential(float(m.group(1)), float(m.group(2)) if m.group(2) else 1.0)
        value = float(text)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(key, f"must be {'nonnegative' if allow_zero else 'positive'}, got {value}")
    return value


EXECUTION_KEYS = frozenset({"workers", "output_dir"})


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    algorithm: str = "radmm"
    K: int = 50
    master_seed: int = 0
    n_runs: int = 1
    output_dir: str = "output"
    workers: int = 1
    inner_tol: float = 1e-10
    inner_max_iter: int = 100

    graph_n: int | None = None
    graph_p: float | None = None
    graph_seed: int = 0
    graph_edges: str | None = None
    graph_edge_file: str | None = None

    data_source: str = "synthetic"
    data_n: int = 250
    data_d: int = 5
    data_separation: float = 1.0
    data_seed: int = 0
    data_path: str | None = None
    data_schema: str | None = None
    data_partition: str = "even_shuffle"
    data_partition_seed: int = 0

    params_C: float = 1.0
    params_rho: float = 0.1
    params_c1: float = 0.25

    eta: float | Exponential = 0.5
    gamma: float | Exponential = 1.0
    alpha: float | None = None

    check_L: float = 2.0
    check_mu: float = 2.0

    base_dir: Path = field(default=Path("."), repr=False)

    KEYS = {
        "algorithm": "algorithm",
        "K": "K",
        "master_seed": "master_seed",
        "n_runs": "n_runs",
        "output_dir": "output_dir",
        "workers": "workers",
        "inner.tol": "inner_tol",
        "inner.max_iter": "inner_max_iter",
        "graph.n": "graph_n",
        "graph.p": "graph_p",
        "graph.seed": "graph_seed",
        "graph.edges": "graph_edges",
        "graph.edge_file": "graph_edge_file",
        "data.source": "data_source",
        "data.n": "data_n",
        "data.d": "data_d",
        "data.separation": "data_separation",
        "data.seed": "data_seed",
        "data.path": "data_path",
        "data.schema": "data_schema",
        "data.partition": "data_partition",
        "data.partition_seed": "data_partition_seed",
        "params.C": "params_C",
        "params.rho": "params_rho",
        "params.c1": "params_c1",
        "eta": "eta",
        "gamma": "gamma",
        "alpha": "alpha",
        "check.L": "check_L",
        "check.mu": "check_mu",
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], base_dir: str | Path = ".") -> "RunConfig":
        cfg = cls(base_dir=Path(base_dir))
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in cls.KEYS:
                raise ConfigError(key, "unknown key")
            attr = cls.KEYS[key]
            kind = types[attr]
            try:
                if attr in ("eta", "gamma"):
                    value = parse_schedule(key, raw, allow_zero=attr == "gamma")
                elif kind.startswith("int"):
                    value = int(raw)
                elif kind.startswith("float"):
                    value = float(raw)
                else:
                    value = raw
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None
            setattr(cfg, attr, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {', '.join(ALGORITHMS)}")
        if self.K < 0:
            raise ConfigError("K", "must be >= 0")
        if self.n_runs < 1:
            raise ConfigError("n_runs", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if not self.inner_tol > 0:
            raise ConfigError("inner.tol", "must be positive")
        sources = [self.graph_edges is not None, self.graph_edge_file is not None, self.graph_p is not None]
        if sum(sources) != 1:
            raise ConfigError("graph", "give exactly one of graph.edges, graph.edge_file or graph.p (random)")
        if self.graph_p is not None and self.graph_n is None:
            raise ConfigError("graph.n", "required for a random graph")
        if self.graph_edges is not None and self.graph_n is None:
            raise ConfigError("graph.n", "required with inline graph.edges")
        if self.data_source not in ("synthetic", "csv", "file"):
            raise ConfigError("data.source", "must be synthetic, csv or file")
        if self.data_source in ("csv", "file") and not self.data_path:
            raise ConfigError("data.path", f"required for data.source = {self.data_source}")
        if self.data_source == "csv" and not self.data_schema:
            raise ConfigError("data.schema", "required for data.source = csv")
        if not self.params_C > 0:
            raise ConfigError("params.C", "must be positive")
        if not self.params_rho > 0:
            raise ConfigError("params.rho", "must be positive")
        if not self.params_c1 > 0:
            raise ConfigError("params.c1", "must be positive")
        if self.algorithm == "private_radmm":
            if self.alpha is None:
                raise ConfigError("alpha", "required for private_radmm")
            if not self.alpha > 0:
                raise ConfigError("alpha", "must be positive")
        if not self.check_L > 0:
            raise ConfigError("check.L", "must be positive")
        if not self.check_mu > 1:
            raise ConfigError("check.mu", "must exceed 1")

    # -- resolution -------------------------------------------------------

    def _path(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def input_files(self) -> list[Path]:
        files = []
        if self.graph_edge_file:
            files.append(self._path(self.graph_edge_file))
        if self.data_source in ("csv", "file"):
            files.append(self._path(self.data_path))
        if self.data_source == "csv":
            files.append(self._path(self.data_schema))
        return files

    def build_graph(self) -> Graph:
        if self.graph_p is not None:
            return random_connected_graph(self.graph_n, self.graph_p, self.graph_seed)
        if self.graph_edge_file is not None:
            return read_edge_file(self._path(self.graph_edge_file), self.graph_n)
        return build_graph(self.graph_n, parse_edge_list(self.graph_edges))

    def build_dataset(self) -> ds.Dataset:
        if self.data_source == "synthetic":
            return ds.synthesize(self.data_n, self.data_d, self.data_separation, self.data_seed)
        if self.data_source == "file":
            return ds.read_dataset(self._path(self.data_path))
        schema = ds.Schema.from_mapping(read_kv_file(self._path(self.data_schema)))
        return ds.preprocess(ds.load_csv(self._path(self.data_path), schema), schema)

    def partition_strategy(self):
        if self.data_partition == "even_shuffle":
            return "even_shuffle"
        try:
            return [float(v) for v in self.data_partition.split(",")]
        except ValueError:
            raise ConfigError("data.partition", "must be even_shuffle or comma-separated fractions") from None

    def build_problem(self) -> tuple[Graph, list[ds.LocalDataset], ErmParams]:
        graph = self.build_graph()
        shards = ds.partition(self.build_dataset(), graph, self.partition_strategy(), self.data_partition_seed)
        params = ErmParams(self.params_C, self.params_rho, graph.n_nodes, self.params_c1)
        try:
            params.check_sizes(shards)
        except ValueError as exc:
            raise ConfigError("params.C", str(exc)) from None
        return graph, shards, params

    def schedule(self) -> Schedule:
        return Schedule(self.eta, self.gamma, self.alpha if self.alpha is not None else 1.0)

    def resolved_items(self) -> list[tuple[str, str]]:
        """Every result-affecting key with its effective value, in sorted key order.

        ``workers`` and ``output_dir`` are left out so that outputs do not depend on them.
        """
        items = []
        for key, attr in sorted(self.KEYS.items()):
            if key in EXECUTION_KEYS:
                continue
            value = getattr(self, attr)
            if value is not None:
                items.append((key, _fmt(value)))
        return items

    def resolved_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.resolved_items())


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> RunConfig:
    path = Path(path)
    mapping = read_kv_file(path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = (p.strip() for p in item.split("=", 1))
        mapping[key] = value
    return RunConfig.from_mapping(mapping, base_dir=path.parent)


def git_blob_sha1(payload: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def input_hash(cfg: RunConfig) -> str:
    """git-style blob SHA-1 over the resolved config text and every input file."""
    payload = cfg.resolved_text().encode()
    for f in cfg.input_files():
        payload += f.read_bytes()
    return git_blob_sha1(payload)


def run_seed(master_seed: int, run_id: int) -> int:
    return int(np.random.SeedSequence([master_seed, run_id]).generate_state(1)[0])
