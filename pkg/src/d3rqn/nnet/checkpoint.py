"""Checkpoint file format.

Layout::

    D3RQN-CHECKPOINT
    format_version = 1
    [network]
    <key> = <value>          one line per NetworkConfig field
    [meta]
    <key> = <value>          free-form run metadata (optional)
    [blocks]
    names = main,target      parameter sets stored, in order
    END
    <payload>

The payload is every block in order; inside a block the arrays follow
``NetworkConfig.layer_shapes()`` order, each flattened row-major, written as
little-endian float64. The header is ASCII, so a file survives a load/save
cycle byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from d3rqn.errors import ConfigError
from d3rqn.nnet.params import NetworkConfig, ParamSet

MAGIC = "D3RQN-CHECKPOINT"
FORMAT_VERSION = 1


def to_bytes(blocks: dict[str, ParamSet], meta: dict[str, str] | None = None) -> bytes:
    if not blocks:
        raise ConfigError("checkpoint needs at least one parameter block")
    configs = {p.config for p in blocks.values()}
    if len(configs) != 1:
        raise ConfigError("all blocks in a checkpoint must share one network config")
    config = configs.pop()
    lines = [MAGIC, f"format_version = {FORMAT_VERSION}", "[network]"]
    lines += [f"{k} = {v}" for k, v in config.to_items()]
    lines.append("[meta]")
    for k, v in (meta or {}).items():
        if "\n" in str(v) or "=" in str(k):
            raise ConfigError(f"meta entry {k!r} cannot be stored")
        lines.append(f"{k} = {v}")
    lines += ["[blocks]", "names = " + ",".join(blocks), "END", ""]
    header = "\n".join(lines).encode("ascii")
    payload = b"".join(np.ascontiguousarray(p.flat(), dtype="<f8").tobytes() for p in blocks.values())
    return header + payload


def from_bytes(data: bytes) -> tuple[dict[str, ParamSet], dict[str, str]]:
    end = data.find(b"\nEND\n")
    if not data.startswith(MAGIC.encode()) or end < 0:
        raise ConfigError("not a checkpoint file")
    header = data[:end].decode("ascii").split("\n")
    payload = data[end + len(b"\nEND\n"):]
    sections: dict[str, dict[str, str]] = {"": {}}
    current = ""
    for line in header[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = {}
            continue
        key, _, value = line.partition(" = ")
        sections[current][key] = value
    version = int(sections[""].get("format_version", "0"))
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version}")
    config = NetworkConfig.from_items(sections.get("network", {}))
    names = [n for n in sections["blocks"]["names"].split(",") if n]
    flat = np.frombuffer(payload, dtype="<f8")
    template = ParamSet.zeros_like(ParamSet.initialize(config))
    n = template.size
    if flat.size != n * len(names):
        raise ConfigError(f"checkpoint payload holds {flat.size} values, expected {n * len(names)}")
    blocks = {name: template.with_flat(flat[k * n:(k + 1) * n].astype(np.float64)) for k, name in enumerate(names)}
    return blocks, sections.get("meta", {})


def save(path: str | Path, blocks: dict[str, ParamSet], meta: dict[str, str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(blocks, meta))
    tmp.replace(path)


def load(path: str | Path) -> tuple[dict[str, ParamSet], dict[str, str]]:
    return from_bytes(Path(path).read_bytes())
