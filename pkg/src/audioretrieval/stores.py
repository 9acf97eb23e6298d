"""Binary embedding stores: magic "EMB1", u32 count, u32 dim, then per entry
a u16 id length, the UTF-8 id, and dim little-endian float32 values."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

STORE_MAGIC = b"EMB1"


@dataclass(frozen=True)
class EmbeddingStore:
    ids: tuple[str, ...]
    vectors: np.ndarray  # (count, dim) float32

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise DataError(
                f"store shape {self.vectors.shape} does not match {len(self.ids)} ids"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def write_store(path, ids, vectors) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    ids = list(ids)
    if vectors.shape[0] != len(ids):
        raise DataError(f"{len(ids)} ids but {vectors.shape[0]} vectors")
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<II", len(ids), vectors.shape[1]))
        for entry_id, vec in zip(ids, vectors):
            encoded = entry_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(vec.tobytes())


def read_store(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        if fh.read(4) != STORE_MAGIC:
            raise DataError(f"{path}: not an embedding store")
        count, dim = struct.unpack("<II", fh.read(8))
        ids = []
        vectors = np.empty((count, dim), dtype=np.float32)
        for i in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            ids.append(fh.read(id_len).decode("utf-8"))
            vec = np.frombuffer(fh.read(4 * dim), dtype="<f4")
            if vec.size != dim:
                raise DataError(f"{path}: truncated store at entry {i}")
            vectors[i] = vec
    return EmbeddingStore(ids=tuple(ids), vectors=vectors)
