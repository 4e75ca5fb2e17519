# modelio/container.py - Bit-exact binary container for models and embedding matrices
"""
Layout:

    8 bytes   magic b"MOESHEAR"
    8 bytes   header length, u64 little-endian
    n bytes   UTF-8 JSON header
    padding   zero bytes up to the next 64-byte boundary
    payload   little-endian float32 tensors, row-major, each starting at a 64-byte aligned
              offset relative to the payload start

The header carries free-form fields plus a "tensors" directory mapping each tensor name
to {"dtype", "shape", "offset"}.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from core.exceptions import MoeShearError, ParseError
from core.experts import Activation, ExpertParams
from core.moe import MoELayer, MoEModel

logger = logging.getLogger(__name__)

MAGIC = b"MOESHEAR"
ALIGNMENT = 64
FORMAT_VERSION = 1

# only float32 is written; the dtype field leaves room for more
DTYPES = {"F32": np.dtype("<f4")}

PathLike = Union[str, Path]


def _align(n: int) -> int:
    return -(-n // ALIGNMENT) * ALIGNMENT


def encode_container(tensors: Dict[str, np.ndarray], fields: Dict[str, Any]) -> bytes:
    """Serialize named tensors plus header fields into container bytes."""
    directory = {}
    chunks = []
    offset = 0
    for name, value in tensors.items():
        data = np.ascontiguousarray(np.asarray(value), dtype=DTYPES["F32"]).tobytes(order="C")
        directory[name] = {"dtype": "F32", "shape": list(np.shape(value)), "offset": offset}
        chunks.append(data)
        padded = _align(len(data))
        chunks.append(b"\x00" * (padded - len(data)))
        offset += padded

    header = dict(fields)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = directory
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    prefix = MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes
    prefix += b"\x00" * (_align(len(prefix)) - len(prefix))
    return prefix + b"".join(chunks)


def decode_container(data: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Parse container bytes into (header fields, tensors); the "tensors" directory stays in the header."""
    if len(data) < 16 or data[:8] != MAGIC:
        raise ParseError("not a moe-shear container (bad magic)")
    (header_len,) = struct.unpack("<Q", data[8:16])
    if 16 + header_len > len(data):
        raise ParseError(f"header length {header_len} runs past end of file ({len(data)} bytes)")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"header is not valid UTF-8 JSON: {e}")
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), dict):
        raise ParseError("header has no tensor directory")

    payload_start = _align(16 + header_len)
    payload_len = max(0, len(data) - payload_start)

    entries = []
    for name, entry in header["tensors"].items():
        if not isinstance(entry, dict):
            raise ParseError("directory entry is not an object", tensor=name)
        dtype_name = entry.get("dtype")
        if dtype_name not in DTYPES:
            raise ParseError(f"unknown dtype {dtype_name!r}", tensor=name)
        shape = entry.get("shape")
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise ParseError(f"invalid shape {shape!r}", tensor=name)
        offset = entry.get("offset")
        if not isinstance(offset, int) or offset < 0:
            raise ParseError(f"invalid offset {offset!r}", tensor=name)
        if offset % ALIGNMENT:
            raise ParseError(f"offset {offset} is not {ALIGNMENT}-byte aligned", tensor=name)
        nbytes = int(np.prod(shape, dtype=np.int64)) * DTYPES[dtype_name].itemsize
        entries.append((offset, nbytes, name, dtype_name, shape))

    tensors = {}
    previous_end, previous_name = 0, None
    for offset, nbytes, name, dtype_name, shape in sorted(entries):
        if offset < previous_end:
            raise ParseError(f"offset {offset} overlaps tensor '{previous_name}'", tensor=name)
        if offset + nbytes > payload_len:
            raise ParseError(
                f"truncated payload: needs bytes [{offset}, {offset + nbytes}) but payload has {payload_len}",
                tensor=name,
            )
        if nbytes == 0:
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            count = nbytes // DTYPES[dtype_name].itemsize
            buffer = np.frombuffer(data, dtype=DTYPES[dtype_name], count=count, offset=payload_start + offset)
            tensors[name] = buffer.reshape(shape).astype(np.float32, copy=True)
        previous_end, previous_name = offset + nbytes, name

    return header, tensors


def write_container(path: PathLike, tensors: Dict[str, np.ndarray], fields: Dict[str, Any]) -> None:
    path = Path(path)
    if path.parent != Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(tensors, fields))


def read_container(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}")
    return decode_container(data)


def _tensor_name(layer: int, part: str, expert: int = None) -> str:
    if expert is None:
        return f"layers.{layer}.{part}"
    return f"layers.{layer}.experts.{expert}.{part}"


def model_to_container(m: MoEModel) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    tensors = {}
    layers = []
    for l, layer in enumerate(m.layers):
        tensors[_tensor_name(l, "router")] = layer.router
        for n, expert in enumerate(layer.experts):
            tensors[_tensor_name(l, "theta1", n)] = expert.theta1
            tensors[_tensor_name(l, "theta2", n)] = expert.theta2
            tensors[_tensor_name(l, "theta3", n)] = expert.theta3
        layers.append({
            "n_experts": layer.n_experts,
            "top_k": layer.top_k,
            "renormalize_topk": layer.renormalize_topk,
            "protected": sorted(layer.protected),
        })

    first = m.layers[0] if m.layers else None
    fields = {
        "kind": "model",
        "d_model": m.d_model,
        "d_ff": first.d_ff if first else 0,
        "n_experts": first.n_experts if first else 0,
        "top_k": first.top_k if first else 0,
        "n_layers": m.n_layers,
        "activation": first.activation.value if first else Activation.SILU.value,
        "layers": layers,
        "metadata": dict(m.metadata),
    }
    return tensors, fields


def model_from_container(header: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> MoEModel:
    if header.get("kind") != "model":
        raise ParseError(f"container holds {header.get('kind')!r}, expected a model")
    try:
        d_model = int(header["d_model"])
        activation = Activation(header["activation"])
        layer_fields = list(header["layers"])
        metadata = dict(header.get("metadata") or {})
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"model header is incomplete or invalid: {e}")
    if len(layer_fields) != int(header.get("n_layers", len(layer_fields))):
        raise ParseError(f"header declares {header.get('n_layers')} layers but describes {len(layer_fields)}")

    def tensor(name: str) -> np.ndarray:
        if name not in tensors:
            raise ParseError("missing from tensor directory", tensor=name)
        return tensors[name]

    layers = []
    for l, fields in enumerate(layer_fields):
        try:
            experts = [
                ExpertParams(
                    tensor(_tensor_name(l, "theta1", n)),
                    tensor(_tensor_name(l, "theta2", n)),
                    tensor(_tensor_name(l, "theta3", n)),
                    activation,
                )
                for n in range(int(fields["n_experts"]))
            ]
            layers.append(MoELayer(
                experts=tuple(experts),
                router=tensor(_tensor_name(l, "router")),
                top_k=int(fields["top_k"]),
                renormalize_topk=bool(fields.get("renormalize_topk", False)),
                protected=frozenset(fields.get("protected", [])),
            ))
        except ParseError:
            raise
        except MoeShearError as e:
            raise ParseError(e.message, tensor=_tensor_name(l, "*"))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"invalid layer description: {e}", tensor=_tensor_name(l, "*"))

    try:
        return MoEModel(tuple(layers), d_model, metadata)
    except MoeShearError as e:
        raise ParseError(e.message)


def save_model(m: MoEModel, path: PathLike) -> None:
    tensors, fields = model_to_container(m)
    write_container(path, tensors, fields)
    logger.info(f"Saved model with {m.n_layers} layers ({m.n_params} params) to {path}")


def load_model(path: PathLike) -> MoEModel:
    header, tensors = read_container(path)
    m = model_from_container(header, tensors)
    logger.debug(f"Loaded model with {m.n_layers} layers from {path}")
    return m
