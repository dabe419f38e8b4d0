"""The frozen pretrained model and its on-disk container.

File layout::

    GIAMODEL1
    MANIFEST <nbytes>
    <utf-8 JSON: format, config, architectures, sections [{name, shape}], hash>
    PARAMS <count>
    <name> <size>
    <size little-endian float64, row-major>\\n
    ...

The hash is a sha256 over the config JSON and every named array, so any
change to a parameter changes it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from graphicl.aligners import FiLMGenerator, LabelBase
from graphicl.dpaa import DPAAConfig, DPAAParams
from graphicl.embedder import EmbedderArch, EmbedderParams
from graphicl.encoder import EncoderInit
from graphicl.errors import ParseError
from graphicl.graphcore.io import _atomic_write, _Cursor

MAGIC = "GIAMODEL1"
_F64 = np.dtype("<f8")


@dataclass
class ModelBundle:
    encoder: EncoderInit
    embedder: EmbedderParams
    feature_gen: FiLMGenerator
    label_gen: FiLMGenerator
    label_base: LabelBase
    dpaa: DPAAParams
    config: dict = field(default_factory=dict)
    domain_embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    domain_names: list = field(default_factory=list)

    @property
    def tau(self) -> float:
        return float(self.config["tau"])

    @property
    def eta(self) -> float:
        return float(self.config["eta"])

    @property
    def l_max(self) -> int:
        return self.label_base.l_max

    def named_arrays(self) -> dict:
        out = {"encoder.theta0": self.encoder.theta0}
        out.update({f"embedder.{k}": v for k, v in self.embedder.arrays.items()})
        out.update({f"feature_gen.{k}": v for k, v in self.feature_gen.arrays().items()})
        out.update({f"label_gen.{k}": v for k, v in self.label_gen.arrays().items()})
        out["label_base"] = self.label_base.table
        out.update({f"dpaa.{k}": v for k, v in self.dpaa.arrays.items()})
        out["domain_embeddings"] = self.domain_embeddings
        return out

    def _meta(self) -> dict:
        return {
            "config": self.config,
            "encoder_seed": int(self.encoder.seed),
            "embedder_arch": self.embedder.arch.as_dict(),
            "dpaa": self.dpaa.config.as_dict(),
            "domain_names": list(self.domain_names),
        }

    def content_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self._meta(), sort_keys=True).encode())
        for name, a in sorted(self.named_arrays().items()):
            a = np.ascontiguousarray(a, dtype=_F64)
            h.update(f"{name}:{a.shape}".encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def section_hash(self, prefix: str) -> str:
        """Hash of the arrays whose names start with ``prefix``."""
        h = hashlib.sha256()
        for name, a in sorted(self.named_arrays().items()):
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(a, dtype=_F64).tobytes())
        return h.hexdigest()


def bundle_bytes(bundle: ModelBundle) -> bytes:
    arrays = bundle.named_arrays()
    manifest = dict(bundle._meta())
    manifest["format"] = MAGIC
    manifest["sections"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    manifest["hash"] = bundle.content_hash()
    text = json.dumps(manifest, sort_keys=True, indent=1).encode()
    parts = [f"{MAGIC}\n".encode(), f"MANIFEST {len(text)}\n".encode(), text, b"\n",
             f"PARAMS {len(arrays)}\n".encode()]
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype=_F64)
        parts.append(f"{name} {a.size}\n".encode())
        parts.append(a.tobytes())
        parts.append(b"\n")
    return b"".join(parts)


def save_bundle(bundle: ModelBundle, path) -> str:
    _atomic_write(path, bundle_bytes(bundle))
    return bundle.content_hash()


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def parse_bundle(data: bytes) -> ModelBundle:
    cur = _Cursor(data)
    if cur.line("magic") != MAGIC:
        raise ParseError("not a model bundle", 0)
    size = cur.section("MANIFEST")
    start = cur.pos
    if start + size + 1 > len(data) or data[start + size:start + size + 1] != b"\n":
        raise ParseError("manifest truncated", start)
    try:
        manifest = json.loads(data[start:start + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}", start) from None
    cur.pos = start + size + 1
    n = cur.section("PARAMS")
    shapes = {s["name"]: tuple(s["shape"]) for s in manifest.get("sections", [])}
    arrays = {}
    for _ in range(n):
        at = cur.pos
        parts = cur.line("parameter header").split()
        if len(parts) != 2 or not parts[1].isdigit():
            raise ParseError("malformed parameter header", at)
        name, count = parts[0], int(parts[1])
        if name not in shapes or int(np.prod(shapes[name])) != count:
            raise ParseError(f"parameter {name!r} does not match the manifest", at)
        arrays[name] = cur.floats(count).reshape(shapes[name])
    if cur.pos != len(data):
        raise ParseError("trailing bytes after last parameter", cur.pos)
    missing = set(shapes) - set(arrays)
    if missing:
        raise ParseError(f"missing parameter sections {sorted(missing)}", cur.pos)

    def group(prefix):
        return {k[len(prefix):]: np.array(v) for k, v in arrays.items() if k.startswith(prefix)}

    bundle = ModelBundle(
        encoder=EncoderInit(_readonly(arrays["encoder.theta0"]), manifest["encoder_seed"]),
        embedder=EmbedderParams(EmbedderArch.from_dict(manifest["embedder_arch"]), group("embedder.")),
        feature_gen=FiLMGenerator.from_arrays(group("feature_gen.")),
        label_gen=FiLMGenerator.from_arrays(group("label_gen.")),
        label_base=LabelBase(np.array(arrays["label_base"])),
        dpaa=DPAAParams(DPAAConfig(**manifest["dpaa"]), group("dpaa.")),
        config=manifest["config"],
        domain_embeddings=np.array(arrays["domain_embeddings"]),
        domain_names=list(manifest["domain_names"]),
    )
    if bundle.content_hash() != manifest.get("hash"):
        raise ParseError("content hash mismatch", 0)
    return bundle


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return parse_bundle(fh.read())
