"""Binary containers for measurement sets, volumes, and scene models.

Layout: magic ``SVLT``, version u16, kind (``MEAS``/``VOLU``/``SCEN``),
then length-prefixed chunks ``[tag 4s][length u64][payload]``, all
little-endian. Readers skip unknown tags, so future fields stay
backward compatible. Header scalars (rates, bounds, poses, waveform)
are float64; bulk payload arrays are float32 with complex data stored
as interleaved re/im pairs. Rewriting a just-read container reproduces
it byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContainerError
from .scene import HashMlpSceneModel, VoxelSceneModel
from .signal import AnalyticSeries, TimeSeries, Waveform, Window
from .simulator import MeasurementSet, SensorPose
from .volume import ReconVolume

MAGIC = b"SVLT"
VERSION = 1
KINDS = (b"MEAS", b"VOLU", b"SCEN")


def _pack_chunk(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _pack_f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _pack_f32(arr) -> bytes:
    """Payload array; complex is interleaved (re, im) along a new axis."""
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        arr = np.stack([arr.real, arr.imag], axis=-1)
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _unpack_f64(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _unpack_f32(payload: bytes, complex_data: bool) -> np.ndarray:
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if complex_data:
        flat = flat[0::2] + 1j * flat[1::2]
    return flat


def _iter_chunks(buf: bytes, offset: int):
    while offset < len(buf):
        if offset + 12 > len(buf):
            raise ContainerError("truncated chunk header")
        tag = buf[offset:offset + 4]
        (length,) = struct.unpack_from("<Q", buf, offset + 4)
        offset += 12
        if offset + length > len(buf):
            raise ContainerError(f"truncated chunk {tag!r}")
        yield tag, buf[offset:offset + length]
        offset += length


def _encode(kind: bytes, chunks) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), kind]
    for tag, payload in chunks:
        out.append(_pack_chunk(tag, payload))
    return b"".join(out)


def _decode(buf: bytes, expect_kind: bytes | None = None):
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise ContainerError("not a SVLT container")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    kind = buf[6:10]
    if kind not in KINDS:
        raise ContainerError(f"unknown container kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"expected {expect_kind!r} container, got {kind!r}")
    return kind, dict(_iter_chunks(buf, 10))


def _need(chunks: dict, tag: bytes) -> bytes:
    if tag not in chunks:
        raise ContainerError(f"missing required chunk {tag!r}")
    return chunks[tag]


# ---------------------------------------------------------------------------
# measurement sets

def measurements_to_bytes(ms: MeasurementSet) -> bytes:
    n_poses = len(ms.poses)
    n_samples = len(ms.series[0].samples) if ms.series else 0
    is_complex = bool(ms.series and np.iscomplexobj(ms.series[0].samples))
    head = [ms.sample_rate_hz if ms.series else 0.0, ms.sound_speed_mps,
            float(n_poses), float(n_samples), float(is_complex)]
    poses = np.array([[*p.tx_origin, *p.rx_origin, *p.boresight,
                       p.beamwidth_rad] for p in ms.poses])
    chunks = [
        (b"HEAD", _pack_f64(head)),
        (b"PROC", ms.processing.encode()),
        (b"BNDS", _pack_f64(ms.scene_bounds)),
        (b"POSE", _pack_f64(poses)),
        (b"TZRO", _pack_f64([s.t0_s for s in ms.series])),
        (b"DATA", _pack_f32(np.stack([s.samples for s in ms.series])
                            if ms.series else np.zeros((0,)))),
    ]
    if ms.waveform is not None:
        w = ms.waveform
        win = w.window
        wf_head = [w.sample_rate_hz, w.f_start_hz, w.f_stop_hz, w.duration_s,
                   win.ratio, float(win.nbar), win.sll_db]
        chunks.append((b"WAVH", _pack_f64(wf_head)))
        chunks.append((b"WAVK", win.kind.encode()))
        chunks.append((b"WAVS", _pack_f64(w.samples)))
    return _encode(b"MEAS", chunks)


def measurements_from_bytes(buf: bytes) -> MeasurementSet:
    _, chunks = _decode(buf, b"MEAS")
    head = _unpack_f64(_need(chunks, b"HEAD"))
    fs, c, n_poses, n_samples, is_complex = (head[0], head[1], int(head[2]),
                                             int(head[3]), bool(head[4]))
    processing = _need(chunks, b"PROC").decode()
    bounds = _unpack_f64(_need(chunks, b"BNDS")).reshape(2, 3)
    pose_arr = _unpack_f64(_need(chunks, b"POSE")).reshape(n_poses, 10)
    t0s = _unpack_f64(_need(chunks, b"TZRO"))
    data = _unpack_f32(_need(chunks, b"DATA"), is_complex)
    data = data.reshape(n_poses, n_samples)
    poses = [SensorPose(tx_origin=row[0:3], rx_origin=row[3:6],
                        boresight=row[6:9], beamwidth_rad=float(row[9]))
             for row in pose_arr]
    cls = AnalyticSeries if is_complex else TimeSeries
    series = [cls(samples=data[i], sample_rate_hz=fs, t0_s=float(t0s[i]))
              for i in range(n_poses)]
    waveform = None
    if b"WAVH" in chunks:
        wh = _unpack_f64(chunks[b"WAVH"])
        window = Window(kind=chunks[b"WAVK"].decode(), ratio=wh[4],
                        nbar=int(wh[5]), sll_db=wh[6])
        waveform = Waveform(samples=_unpack_f64(chunks[b"WAVS"]),
                            sample_rate_hz=wh[0], f_start_hz=wh[1],
                            f_stop_hz=wh[2], duration_s=wh[3], window=window)
    return MeasurementSet(poses=poses, series=series, waveform=waveform,
                          sound_speed_mps=c, scene_bounds=bounds,
                          processing=processing)


# ---------------------------------------------------------------------------
# volumes

def volume_to_bytes(vol: ReconVolume) -> bytes:
    is_complex = np.iscomplexobj(vol.voxels)
    head = [*map(float, vol.dims), float(is_complex)]
    return _encode(b"VOLU", [
        (b"HEAD", _pack_f64(head)),
        (b"BNDS", _pack_f64(vol.bounds)),
        (b"DATA", _pack_f32(vol.voxels)),
    ])


def volume_from_bytes(buf: bytes) -> ReconVolume:
    _, chunks = _decode(buf, b"VOLU")
    head = _unpack_f64(_need(chunks, b"HEAD"))
    dims = tuple(int(v) for v in head[:3])
    bounds = _unpack_f64(_need(chunks, b"BNDS")).reshape(2, 3)
    data = _unpack_f32(_need(chunks, b"DATA"), bool(head[3]))
    return ReconVolume(dims=dims, bounds=bounds, voxels=data.reshape(dims))


# ---------------------------------------------------------------------------
# scene models

def scene_to_bytes(model) -> bytes:
    if isinstance(model, VoxelSceneModel):
        head = [*map(float, model.dims)]
        return _encode(b"SCEN", [
            (b"SKND", b"voxel"),
            (b"HEAD", _pack_f64(head)),
            (b"BNDS", _pack_f64(model.bounds)),
            (b"DATA", _pack_f32(model.values)),
        ])
    if isinstance(model, HashMlpSceneModel):
        enc = model.encoding
        head = [float(enc.n_levels), float(enc.base_resolution), enc.growth,
                float(enc.log2_table_size), float(enc.n_features),
                float(model.hidden)]
        chunks = [
            (b"SKND", b"hashmlp"),
            (b"HEAD", _pack_f64(head)),
            (b"BNDS", _pack_f64(model.bounds)),
            (b"TABL", _pack_f32(enc.tables)),
        ]
        for i, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
            chunks.append((f"W{i:03d}".encode(), _pack_f32(w)))
            chunks.append((f"B{i:03d}".encode(), _pack_f32(b)))
        return _encode(b"SCEN", chunks)
    raise ContainerError(f"cannot serialize scene model {type(model).__name__}")


def scene_from_bytes(buf: bytes):
    _, chunks = _decode(buf, b"SCEN")
    skind = _need(chunks, b"SKND").decode()
    bounds = _unpack_f64(_need(chunks, b"BNDS")).reshape(2, 3)
    head = _unpack_f64(_need(chunks, b"HEAD"))
    if skind == "voxel":
        dims = tuple(int(v) for v in head[:3])
        values = _unpack_f32(_need(chunks, b"DATA"), True).reshape(dims)
        return VoxelSceneModel(dims, bounds, values)
    if skind == "hashmlp":
        model = HashMlpSceneModel(
            bounds, n_levels=int(head[0]), base_resolution=int(head[1]),
            growth=head[2], log2_table_size=int(head[3]),
            n_features=int(head[4]), hidden=int(head[5]))
        model.encoding.tables[...] = _unpack_f32(
            _need(chunks, b"TABL"), False).reshape(model.encoding.tables.shape)
        for i in range(len(model.mlp.weights)):
            w = _unpack_f32(_need(chunks, f"W{i:03d}".encode()), False)
            b = _unpack_f32(_need(chunks, f"B{i:03d}".encode()), False)
            model.mlp.weights[i][...] = w.reshape(model.mlp.weights[i].shape)
            model.mlp.biases[i][...] = b.reshape(model.mlp.biases[i].shape)
        return model
    raise ContainerError(f"unknown scene model kind {skind!r}")


# ---------------------------------------------------------------------------
# file front end

_WRITERS = {MeasurementSet: measurements_to_bytes, ReconVolume: volume_to_bytes}


def write_container(path, obj) -> None:
    fn = _WRITERS.get(type(obj), scene_to_bytes)
    with open(path, "wb") as f:
        f.write(fn(obj))


def read_container(path):
    """Returns (kind string, decoded object)."""
    with open(path, "rb") as f:
        buf = f.read()
    kind, _ = _decode(buf)
    if kind == b"MEAS":
        return "MEAS", measurements_from_bytes(buf)
    if kind == b"VOLU":
        return "VOLU", volume_from_bytes(buf)
    return "SCEN", scene_from_bytes(buf)
