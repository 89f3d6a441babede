"""Text-first, versioned storage for clouds, datasets, models and manifests.

Every numeric value is written with ``repr`` precision, so reloading gives
back bit-identical floats on any platform. Models and manifests carry a
SHA-256 of their canonical JSON bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .features import Standardizer
from .geometry import PointCloud, RigidTransform
from .gpc import KernelSpec, SvgpModel
from .perturb import DEFAULT_VOCABULARY, LabeledPair, PerturbSpec, Vocabulary

MODEL_FORMAT = "icpexplain-model"
MODEL_VERSION = 1
DATASET_VERSION = 1


class PersistenceError(Exception):
    pass


class VersionMismatchError(PersistenceError):
    pass


class IntegrityError(PersistenceError):
    """Stored hash does not match the content."""


class TruncatedFileError(PersistenceError):
    """File is incomplete or not parseable."""


class MissingManifestError(PersistenceError):
    pass


def canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    return sha256_hex(Path(path).read_bytes())


# --------------------------------------------------------------------------
# point clouds and transforms


def write_ply(path, cloud: PointCloud) -> None:
    has_normals = cloud.normals is not None
    props = ["x", "y", "z"] + (["nx", "ny", "nz"] if has_normals else [])
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {p}" for p in props]
    lines.append("end_header")
    data = cloud.points if not has_normals else np.hstack([cloud.points, cloud.normals])
    lines += [" ".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    text = Path(path).read_text(errors="strict").splitlines()
    if not text or text[0].strip() != "ply":
        raise PersistenceError(f"{path}: not a PLY file")
    count = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for i, line in enumerate(text[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise PersistenceError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if count is None or body_start is None:
        raise TruncatedFileError(f"{path}: incomplete PLY header")
    rows = text[body_start:body_start + count]
    if len(rows) < count:
        raise TruncatedFileError(f"{path}: expected {count} vertices, found {len(rows)}")
    data = np.array([[float(v) for v in r.split()[:len(props)]] for r in rows], dtype=float)
    col = {p: k for k, p in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if all(p in col for p in ("nx", "ny", "nz")):
        normals = data[:, [col["nx"], col["ny"], col["nz"]]]
    return PointCloud(pts, normals)


def write_xyz(path, cloud: PointCloud) -> None:
    Path(path).write_text("\n".join(" ".join(repr(float(v)) for v in p) for p in cloud.points) + "\n")


def read_xyz(path) -> PointCloud:
    data = np.loadtxt(path, dtype=float, ndmin=2)
    return PointCloud(data[:, :3], data[:, 3:6] if data.shape[1] >= 6 else None)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_transform(path, t: RigidTransform) -> None:
    Path(path).write_text(json.dumps(t.to_list()) + "\n")


def read_transform(path) -> RigidTransform:
    return RigidTransform.from_list(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# models


def model_payload(model: SvgpModel) -> dict:
    if model.inducing is None:
        raise PersistenceError("cannot save a model without parameters")
    kernel = model.kernel.to_dict()
    kernel.update(lengthscale=model.kernel.lengthscale, variance=model.kernel.variance)
    return {
        "vocabulary": model.vocabulary.names,
        "kernel": kernel,
        "num_inducing": int(model.num_inducing),
        "inducing": model.inducing.tolist(),
        "means": model.means.tolist(),
        # row-major lower-triangular factors, one per class
        "chol": model.chol.tolist(),
        "standardizer": None if model.standardizer is None else model.standardizer.to_dict(),
        "jitter": model.jitter,
        "trained": model.trained,
        "stale": model.stale,
        "metadata": model.metadata,
        "elbo_trace": [float(v) for v in model.elbo_trace],
    }


def model_from_payload(p: dict) -> SvgpModel:
    k = p["kernel"]
    kernel = KernelSpec(k["family"], k["lengthscale"], k["variance"], k["degree"], k["offset"])
    return SvgpModel(
        vocabulary=Vocabulary(p["vocabulary"]),
        kernel=kernel,
        num_inducing=p["num_inducing"],
        inducing=np.array(p["inducing"], dtype=float),
        means=np.array(p["means"], dtype=float),
        chol=np.array(p["chol"], dtype=float),
        standardizer=None if p["standardizer"] is None else Standardizer.from_dict(p["standardizer"]),
        jitter=p["jitter"],
        trained=p["trained"],
        stale=p["stale"],
        metadata=p["metadata"],
        elbo_trace=list(p["elbo_trace"]),
    )


def save_model(model: SvgpModel, path) -> str:
    """Write the model JSON; returns its content hash."""
    payload = model_payload(model)
    digest = sha256_hex(canonical_bytes(payload))
    doc = {"format": MODEL_FORMAT, "format_version": MODEL_VERSION, "sha256": digest, "payload": payload}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n")
    return digest


def load_model(path) -> SvgpModel:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise TruncatedFileError(f"{path}: unreadable model file ({err})") from None
    if not isinstance(doc, dict) or not {"format_version", "sha256", "payload"} <= doc.keys():
        raise TruncatedFileError(f"{path}: model file is missing required sections")
    if doc["format_version"] != MODEL_VERSION:
        raise VersionMismatchError(
            f"{path}: model format version {doc['format_version']} is not supported "
            f"by this reader (version {MODEL_VERSION})")
    if sha256_hex(canonical_bytes(doc["payload"])) != doc["sha256"]:
        raise IntegrityError(f"{path}: content hash mismatch")
    try:
        return model_from_payload(doc["payload"])
    except (KeyError, TypeError, ValueError) as err:
        raise TruncatedFileError(f"{path}: malformed model payload ({err})") from None


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    pairs: list
    vocabulary: Vocabulary
    manifest: dict
    # manifest vocabulary differs from the default concept set
    vocabulary_extended: bool = False

    @property
    def manifest_hash(self) -> str:
        return sha256_hex(canonical_bytes(self.manifest))


def _provenance_json(prov: dict) -> dict:
    out = {}
    for key, value in prov.items():
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, np.floating):
            value = float(value)
        out[key] = value
    return out


def save_dataset(path, pairs, vocabulary: Optional[Vocabulary] = None, spec: Optional[PerturbSpec] = None,
                 extra: Optional[dict] = None) -> str:
    """Write ``manifest.json`` plus PLY files; returns the manifest hash.

    Sources are stored per pair; targets are stored once per distinct base.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    vocabulary = vocabulary or Vocabulary()
    inventory = {}
    target_files: dict = {}
    samples = []
    for i, pair in enumerate(pairs):
        src_name = f"pair_{i:05d}_source.ply"
        write_ply(path / src_name, pair.source)
        inventory[src_name] = file_sha256(path / src_name)
        key = id(pair.target)
        if key not in target_files:
            base = pair.provenance.get("base") or f"target{len(target_files)}"
            name = f"target_{len(target_files):03d}_{base}.ply"
            write_ply(path / name, pair.target)
            inventory[name] = file_sha256(path / name)
            target_files[key] = name
        samples.append({
            "index": i,
            "label": pair.label.name,
            "source": src_name,
            "target": target_files[key],
            "truth_transform": pair.truth_transform.to_list(),
            "provenance": _provenance_json(pair.provenance),
        })
    manifest = {
        "format_version": DATASET_VERSION,
        "vocabulary": vocabulary.names,
        "perturb_spec": None if spec is None else spec.to_dict(),
        "seed": None if spec is None else spec.seed,
        "samples": samples,
        "inventory": inventory,
    }
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_bytes(canonical_bytes(manifest))
    return sha256_hex(canonical_bytes(manifest))


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise MissingManifestError(f"{path}: missing manifest")
    try:
        manifest = json.loads(mpath.read_bytes())
    except json.JSONDecodeError as err:
        raise TruncatedFileError(f"{mpath}: unreadable manifest ({err})") from None
    if manifest.get("format_version") != DATASET_VERSION:
        raise VersionMismatchError(
            f"{mpath}: dataset format version {manifest.get('format_version')} is not supported "
            f"by this reader (version {DATASET_VERSION})")
    inventory = manifest.get("inventory", {})
    for name, digest in inventory.items():
        f = path / name
        if not f.is_file():
            raise IntegrityError(f"{path}: inventory lists {name} but the file is missing")
        if file_sha256(f) != digest:
            raise IntegrityError(f"{path}: inventory hash mismatch for {name}")
    vocabulary = Vocabulary(manifest["vocabulary"])
    clouds: dict = {}

    def cloud(name):
        if name not in inventory:
            raise IntegrityError(f"{path}: {name} is not in the inventory")
        if name not in clouds:
            clouds[name] = read_ply(path / name)
        return clouds[name]

    pairs = []
    for s in manifest["samples"]:
        pairs.append(LabeledPair(
            cloud(s["source"]), cloud(s["target"]), vocabulary.label(s["label"]),
            RigidTransform.from_list(s["truth_transform"]), dict(s["provenance"])))
    extended = vocabulary.names != list(DEFAULT_VOCABULARY)
    return Dataset(pairs, vocabulary, manifest, extended)


# --------------------------------------------------------------------------
# experiment manifests


def write_manifest(path, configs: dict, files=(), seed=None) -> str:
    """Record configs and content hashes of produced files; returns the manifest hash."""
    manifest = {
        "format_version": DATASET_VERSION,
        "seed": seed,
        "configs": configs,
        "inventory": {Path(f).name: file_sha256(f) for f in files},
    }
    Path(path).write_bytes(canonical_bytes(manifest))
    return sha256_hex(canonical_bytes(manifest))


def verify_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingManifestError(f"{path}: missing manifest")
    manifest = json.loads(path.read_bytes())
    for name, digest in manifest.get("inventory", {}).items():
        f = path.parent / name
        if not f.is_file() or file_sha256(f) != digest:
            raise IntegrityError(f"{path}: inventory mismatch for {name}")
    return manifest
