"""Model configuration, parameter container and binary serialization."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..aspectfeat import ALL_ASPECTS, FeatureDims
from ..docmodel import DocumentPage
from ..geoenc import PE_VARIANTS, XYPosConfig

NO_VALUE = 0  # pointer class 0; segment i scores at class i + 1

PARAMS_MAGIC = b"FPNT"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    dual_layers: int = 6
    attn_heads: int = 8
    max_key_tokens: int = 50
    max_segments: int = 41
    max_page_tokens: int = 96
    pe_variant: str = "xy"
    aspect_flags: tuple = ALL_ASPECTS
    entity_encoder_depth: int = 1
    token_encoder_depth: int = 1
    dropout: float = 0.0
    xy_m: int = 16
    xy_n: int = 8
    appearance_dim: int = 32
    text_dim: int = 128
    token_vocab: int = 512
    ffn_ratio: int = 2
    scorer_hidden: int = 128
    key_in_sequence: bool = True
    key_in_scorer: bool = True
    learning_rate: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 1.0
    grad_clip: float = 1.0
    epochs: int = 12
    batch_size: int = 32
    early_stop_train_f1: Optional[float] = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.attn_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by "
                             f"{self.attn_heads} heads")
        if self.pe_variant not in PE_VARIANTS:
            raise ValueError(f"pe_variant must be one of {PE_VARIANTS}")
        if self.pe_variant == "xy" and self.xy_m * self.xy_n != self.d_model:
            raise ValueError(f"xy grid {self.xy_m}x{self.xy_n} != d_model "
                             f"{self.d_model}")
        unknown = set(self.aspect_flags) - set(ALL_ASPECTS)
        if unknown:
            raise ValueError(f"unknown aspect flags {sorted(unknown)}")
        object.__setattr__(self, "aspect_flags", tuple(self.aspect_flags))

    @property
    def feature_dims(self) -> FeatureDims:
        return FeatureDims(appearance=self.appearance_dim, text=self.text_dim)

    @property
    def xy_config(self) -> XYPosConfig:
        return XYPosConfig(m=self.xy_m, n=self.xy_n)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def scorer_input_dim(self) -> int:
        base = self.d_model + self.feature_dims.total
        if self.key_in_scorer:
            base += self.d_model
        return base

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["aspect_flags"] = list(self.aspect_flags)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if "aspect_flags" in data:
            data["aspect_flags"] = tuple(data["aspect_flags"])
        return cls(**data)


@dataclass(frozen=True)
class TaskBInstance:
    """One query: a key's text against a page; answer is a segment or none."""

    key_text: str
    page: DocumentPage
    gold_index: Optional[int]  # segment id, None = empty value
    intent: Optional[object] = None  # KeyIntent when known; used by reporting

    @property
    def gold_class(self) -> int:
        return NO_VALUE if self.gold_index is None else self.gold_index + 1


@dataclass
class ModelParams:
    """Named weight tensors plus the configuration that shaped them."""

    config: ModelConfig
    tensors: dict

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(config=self.config,
                           tensors={k: v.astype(dtype)
                                    for k, v in self.tensors.items()})

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            fh.write(self._serialize())

    def _serialize(self) -> bytes:
        out = [PARAMS_MAGIC, struct.pack("<I", PARAMS_VERSION)]
        cfg_blob = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        out.append(struct.pack("<I", len(cfg_blob)))
        out.append(cfg_blob)
        names = sorted(self.tensors)
        out.append(struct.pack("<I", len(names)))
        for name in names:
            tensor = np.ascontiguousarray(self.tensors[name], dtype=np.float32)
            blob = name.encode("utf-8")
            out.append(struct.pack("<I", len(blob)))
            out.append(blob)
            out.append(struct.pack("<I", tensor.ndim))
            out.append(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
            out.append(tensor.tobytes(order="C"))
        return b"".join(out)

    def content_hash(self) -> str:
        return hashlib.sha256(self._serialize()).hexdigest()

    @classmethod
    def load(cls, path) -> "ModelParams":
        raw = Path(path).read_bytes()
        view = memoryview(raw)
        if bytes(view[:4]) != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a model parameters file")
        (version,) = struct.unpack_from("<I", view, 4)
        if version != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (cfg_len,) = struct.unpack_from("<I", view, 8)
        offset = 12
        config = ModelConfig.from_dict(
            json.loads(bytes(view[offset:offset + cfg_len]).decode("utf-8")))
        offset += cfg_len
        (count,) = struct.unpack_from("<I", view, offset)
        offset += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", view, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", view, offset)
            offset += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(view, dtype=np.float32, count=size,
                                 offset=offset).reshape(shape)
            offset += 4 * size
            tensors[name] = data.astype(config.np_dtype)
        return cls(config=config, tensors=tensors)
