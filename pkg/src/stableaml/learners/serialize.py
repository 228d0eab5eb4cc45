"""The ``.saml-model`` container.

Layout: a magic line, one line of JSON header, then the concatenated raw
little-endian bytes of every array listed in the header. The header carries
the payload length and its sha256 so truncation and corruption are caught
before any array is rebuilt. Floats travel as raw bytes, which is what makes
a round trip bit-identical.
"""

from __future__ import annotations

import hashlib
import io
import json

import numpy as np

from ..errors import FormatError
from ..features import CATALOG_VERSION

MAGIC = b"STABLEAML-MODEL\n"
FORMAT_VERSION = "1.0"
EXTENSION = ".saml-model"


def _std_arrays(prefix, std, arrays):
    arrays[f"{prefix}.mean"] = std.mean
    arrays[f"{prefix}.scale"] = std.scale
    arrays[f"{prefix}.constant"] = std.constant


def _tree_arrays(prefix, tree, arrays):
    for k in tree.__slots__:
        arrays[f"{prefix}.{k}"] = getattr(tree, k)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decompose(model):
    arrays: dict[str, np.ndarray] = {}
    meta = {"K": int(model.K), "n_features": int(model.n_features)}
    kind = model.kind
    if kind == "logreg":
        arrays["B"], arrays["b"] = model.B, model.b
        _std_arrays("std", model.standardizer, arrays)
        meta["n_iter"] = int(model.n_iter)
    elif kind in ("mlp", "sage"):
        for i, (W, v) in enumerate(zip(model.weights, model.biases)):
            arrays[f"W{i}"], arrays[f"b{i}"] = W, v
        _std_arrays("std", model.standardizer, arrays)
        meta["n_layers"] = len(model.weights)
        meta["epochs_run"] = int(model.epochs_run)
        meta["history"] = [float(h) for h in model.history]
    elif kind in ("cart", "rf"):
        for i, t in enumerate(model.trees):
            _tree_arrays(f"t{i}", t, arrays)
        meta["n_trees"] = len(model.trees)
    elif kind == "gbm":
        for m, round_trees in enumerate(model.trees):
            for k, t in enumerate(round_trees):
                _tree_arrays(f"t{m}.{k}", t, arrays)
        arrays["base_score"] = model.base_score
        meta["n_rounds"] = len(model.trees)
        meta["train_loss"] = [float(x) for x in model.train_loss]
    else:
        raise FormatError(f"cannot serialize model kind {kind!r}")
    return meta, arrays


def dumps_model(model) -> bytes:
    meta, arrays = _decompose(model)
    payload = io.BytesIO()
    listing = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|",) else a.dtype
        raw = a.astype(dtype, copy=False).tobytes()
        listing.append({"name": name, "dtype": dtype.str, "shape": list(a.shape), "nbytes": len(raw)})
        payload.write(raw)
    body = payload.getvalue()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "catalog_version": CATALOG_VERSION,
        "seed": int(model.seed),
        "params": _jsonable(model.params),
        "meta": meta,
        "provenance": _jsonable(model.provenance),
        "arrays": listing,
        "payload_bytes": len(body),
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    return MAGIC + line + body


def save_model(model, sink) -> None:
    """Write ``model`` to a path or a binary file object."""
    blob = dumps_model(model)
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        with open(sink, "wb") as fh:
            fh.write(blob)


def read_header(blob: bytes):
    if not blob.startswith(MAGIC):
        raise FormatError("not a .saml-model file (bad magic line)")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError("truncated model file: header line incomplete")
    try:
        header = json.loads(blob[len(MAGIC):end])
    except ValueError as exc:
        raise FormatError(f"corrupt model header: {exc}") from None
    version = str(header.get("format_version", ""))
    major = version.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatError(f"unsupported model format version {version} (this build reads {FORMAT_VERSION})")
    return header, blob[end + 1:]


def loads_model(blob: bytes):
    header, body = read_header(blob)
    if len(body) != header["payload_bytes"]:
        raise FormatError(f"truncated model file: payload has {len(body)} of {header['payload_bytes']} bytes")
    if hashlib.sha256(body).hexdigest() != header["payload_sha256"]:
        raise FormatError("model payload checksum mismatch")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        n = entry["nbytes"]
        a = np.frombuffer(body[offset:offset + n], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = a.astype(a.dtype.newbyteorder("="), copy=True)
        offset += n
    return _rebuild(header, arrays)


def load_model(source):
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    return loads_model(blob)


def _params(header):
    p = dict(header["params"])
    if "hidden" in p and isinstance(p["hidden"], list):
        p["hidden"] = tuple(p["hidden"])
    return p


def _rebuild(header, arrays):
    from ..gnn import SageModel
    from .common import Standardizer
    from .linear import LinearModel
    from .mlp import MlpModel
    from .trees import Tree, TreeEnsembleModel

    kind, meta = header["kind"], header["meta"]
    p, seed, prov = _params(header), header["seed"], header["provenance"]

    def std():
        return Standardizer(arrays["std.mean"], arrays["std.scale"], arrays["std.constant"])

    def tree(prefix):
        return Tree(**{k: arrays[f"{prefix}.{k}"] for k in Tree.__slots__})

    if kind == "logreg":
        return LinearModel(arrays["B"], arrays["b"], std(), meta["K"], p, seed, meta["n_iter"], prov)
    if kind in ("mlp", "sage"):
        L = meta["n_layers"]
        cls = MlpModel if kind == "mlp" else SageModel
        return cls([arrays[f"W{i}"] for i in range(L)], [arrays[f"b{i}"] for i in range(L)], std(),
                   meta["K"], p, seed, meta["epochs_run"], meta["history"], prov)
    if kind in ("cart", "rf"):
        trees = [tree(f"t{i}") for i in range(meta["n_trees"])]
        return TreeEnsembleModel(kind, trees, meta["K"], meta["n_features"], p, seed, provenance=prov)
    if kind == "gbm":
        rounds = [[tree(f"t{m}.{k}") for k in range(meta["K"])] for m in range(meta["n_rounds"])]
        return TreeEnsembleModel("gbm", rounds, meta["K"], meta["n_features"], p, seed,
                                 base_score=arrays["base_score"], train_loss=meta["train_loss"], provenance=prov)
    raise FormatError(f"unknown model kind {kind!r}")


def dump_model(model, feature_names=None, max_trees=3) -> str:
    """Human-readable listing: coefficients for linear models, indented trees otherwise."""
    from ..features import FEATURE_NAMES

    names = list(feature_names or FEATURE_NAMES)

    def fname(j):
        return names[j] if j < len(names) else f"x{j}"

    out = [f"kind: {model.kind}", f"seed: {model.seed}",
           "params: " + json.dumps(_jsonable(model.params), sort_keys=True)]
    if model.kind == "logreg":
        out.append("coefficients (standardized scale):")
        for k in range(model.K):
            out.append(f"  class {k}: intercept {model.b[k]:+.6g}")
            for j in np.flatnonzero(model.B[k]):
                out.append(f"    {fname(j):<32} {model.B[k, j]:+.6g}")
        return "\n".join(out) + "\n"
    if model.kind in ("mlp", "sage"):
        for i, W in enumerate(model.weights):
            out.append(f"layer {i}: weight {W.shape[0]}x{W.shape[1]}, |W|_F = {np.linalg.norm(W):.6g}")
        return "\n".join(out) + "\n"
    listed = 0
    for t, k in model.iter_trees():
        if listed >= max_trees:
            out.append("...")
            break
        out.append(f"tree {listed}" + ("" if k is None else f" (class {k})") + f": {t.n_nodes} nodes")
        stack = [(0, 1)]
        while stack:
            node, depth = stack.pop()
            pad = "  " * depth
            if t.feature[node] < 0:
                vals = ", ".join(f"{v:.6g}" for v in t.value[node])
                out.append(f"{pad}leaf [{vals}] cover={t.cover[node]:.6g}")
            else:
                out.append(f"{pad}{fname(int(t.feature[node]))} <= {t.threshold[node]:.6g} "
                           f"(gain {t.gain[node]:.6g})")
                stack.append((int(t.right[node]), depth + 1))
                stack.append((int(t.left[node]), depth + 1))
        listed += 1
    return "\n".join(out) + "\n"
