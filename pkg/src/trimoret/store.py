"""Bit-exact persistence formats: embedding stores, dataset splits, and the
shared binary framing used by checkpoints.

All bulk floating-point data is little-endian 32-bit; structured metadata is
canonical JSON (sorted keys) so repeated writes are byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .synthgen import DatasetSplit
from .types import (
    LatentVector,
    MotionSequence,
    ObjectInstance,
    SampleTruth,
    SceneGraphMeta,
    ScenePointCloud,
    SOURCES,
    TextFeature,
    TrimodalSample,
)

EMBED_MAGIC = b"TMRE"
DATASET_MAGIC = b"TMDS"
CHECKPOINT_MAGIC = b"TMCK"
FORMAT_VERSION = 1


class StoreFormatError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _w_str(f, s: str):
    data = s.encode()
    f.write(struct.pack("<H", len(data)))
    f.write(data)


def _r_str(f) -> str:
    (n,) = struct.unpack("<H", f.read(2))
    return f.read(n).decode()


def _w_blob(f, data: bytes):
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _r_blob(f) -> bytes:
    (n,) = struct.unpack("<I", f.read(4))
    return f.read(n)


def check_header(f, magic: bytes, what: str) -> int:
    got = f.read(4)
    if got != magic:
        raise StoreFormatError(f"bad magic for {what}: {got!r}")
    (version,) = struct.unpack("<H", f.read(2))
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported {what} version {version}")
    return version


# ---------------------------------------------------------------------------
# embedding store


def save_embeddings(path, latents: list[LatentVector]) -> None:
    if not latents:
        raise ValueError("nothing to save")
    d = latents[0].values.shape[0]
    bitmap = 0
    for lv in latents:
        if lv.values.shape != (d,):
            raise ValueError("inconsistent latent dimension")
        bitmap |= 1 << SOURCES.index(lv.source)
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<HIIB", FORMAT_VERSION, d, len(latents), bitmap))
        for lv in latents:
            _w_str(f, lv.sample_id)
            f.write(struct.pack("<B", SOURCES.index(lv.source)))
            f.write(np.asarray(lv.values, dtype="<f4").tobytes())


def load_embeddings(path) -> list[LatentVector]:
    with open(path, "rb") as f:
        check_header(f, EMBED_MAGIC, "embedding store")
        d, count, _bitmap = struct.unpack("<IIB", f.read(9))
        out = []
        for _ in range(count):
            sid = _r_str(f)
            (src,) = struct.unpack("<B", f.read(1))
            values = np.frombuffer(f.read(4 * d), dtype="<f4")
            out.append(LatentVector(values=values, source=SOURCES[src], sample_id=sid))
        if f.read(1):
            raise StoreFormatError("trailing bytes in embedding store")
    return out


# ---------------------------------------------------------------------------
# dataset splits


def _meta_to_json(meta: SceneGraphMeta) -> dict:
    return {
        "room_bounds": meta.room_bounds.tolist(),
        "objects": [
            {
                "class": o.class_label,
                "anchor": o.anchor.tolist(),
                "half_extents": o.half_extents.tolist(),
                "color": o.color.tolist(),
                "point_range": list(o.point_range),
            }
            for o in meta.objects
        ],
    }


def _meta_from_json(d: dict) -> SceneGraphMeta:
    return SceneGraphMeta(
        objects=tuple(
            ObjectInstance(
                class_label=o["class"],
                anchor=o["anchor"],
                half_extents=o["half_extents"],
                color=o["color"],
                point_range=tuple(o["point_range"]),
            )
            for o in d["objects"]
        ),
        room_bounds=np.array(d["room_bounds"]),
    )


def save_split(path, split: DatasetSplit) -> None:
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<HI", FORMAT_VERSION, len(split.samples)))
        _w_blob(f, canonical_json(list(split.scene_seeds)))
        for s in split.samples:
            _w_str(f, s.id)
            _w_str(f, s.text.raw_caption)
            tv = np.asarray(s.text.values, dtype="<f4")
            f.write(struct.pack("<I", tv.shape[0]))
            f.write(tv.tobytes())
            frames = np.asarray(s.motion.frames, dtype="<f4")
            f.write(struct.pack("<I", frames.shape[0]))
            f.write(frames.tobytes())
            pts = np.asarray(s.scene.points, dtype="<f4")
            f.write(struct.pack("<I", pts.shape[0]))
            f.write(pts.tobytes())
            extra = {
                "meta": _meta_to_json(s.scene.meta) if s.scene.meta else None,
                "truth": None if s.truth is None else {
                    "target_index": s.truth.target_index,
                    "action": s.truth.action,
                    "waypoints": s.truth.waypoints.tolist(),
                },
            }
            _w_blob(f, canonical_json(extra))


def load_split(path) -> DatasetSplit:
    samples = []
    with open(path, "rb") as f:
        check_header(f, DATASET_MAGIC, "dataset")
        (count,) = struct.unpack("<I", f.read(4))
        scene_seeds = tuple(json.loads(_r_blob(f)))
        for _ in range(count):
            sid = _r_str(f)
            caption = _r_str(f)
            (d_text,) = struct.unpack("<I", f.read(4))
            text = np.frombuffer(f.read(4 * d_text), dtype="<f4")
            (t,) = struct.unpack("<I", f.read(4))
            frames = np.frombuffer(f.read(4 * t * 22 * 3), dtype="<f4").reshape(t, 22, 3)
            (n,) = struct.unpack("<I", f.read(4))
            pts = np.frombuffer(f.read(4 * n * 6), dtype="<f4").reshape(n, 6)
            extra = json.loads(_r_blob(f))
            meta = _meta_from_json(extra["meta"]) if extra["meta"] else None
            truth = None
            if extra["truth"] is not None:
                truth = SampleTruth(
                    target_index=extra["truth"]["target_index"],
                    action=extra["truth"]["action"],
                    waypoints=np.array(extra["truth"]["waypoints"]).reshape(-1, 2),
                )
            samples.append(TrimodalSample(
                id=sid,
                text=TextFeature(values=text, raw_caption=caption),
                motion=MotionSequence(frames=frames),
                scene=ScenePointCloud(points=pts, meta=meta),
                truth=truth,
            ))
    return DatasetSplit(samples=tuple(samples), scene_seeds=scene_seeds)


def save_manifest(path, manifest: dict) -> None:
    Path(path).write_bytes(json.dumps(manifest, sort_keys=True, indent=2).encode() + b"\n")
