"""Factorization bundles on disk: manifest.json plus raw float64 blobs.

Matrices are stored row-major little-endian float64 and referenced from the
manifest by relative path with a sha256 checksum, so a truncated or edited
blob is detected on load.  Manifests are written with sorted keys and no
timestamps, making bundles byte-identical across reruns with fixed seeds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import Hilbertization, Projector
from .errors import BundleIntegrityError
from .extension import McShaneMap, PolyMap
from .pou import Decoder
from .pipeline import CONTINUOUS, Certificate, Factorization
from .spaces import (
    CompactSample,
    Grid,
    GridFunction,
    LinearOperatorMatrix,
    ModulusData,
    family_from_dict,
    family_to_dict,
    seminorm_from_dict,
    seminorm_to_dict,
    SeminormFamily,
)
from .testbed import FamilySpec, OperatorSpec

FORMAT = "opfactor-bundle"
VERSION = 1
MANIFEST = "manifest.json"


def _blob_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _write_blob(root: Path, name: str, arr: np.ndarray) -> dict:
    rel = f"blobs/{name}.f64"
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    data = _blob_bytes(arr)
    path.write_bytes(data)
    return {"path": rel, "shape": list(arr.shape),
            "sha256": hashlib.sha256(data).hexdigest()}


def _read_blob(root: Path, entry: dict) -> np.ndarray:
    path = root / entry["path"]
    if not path.exists():
        raise BundleIntegrityError(f"missing blob {entry['path']}")
    data = path.read_bytes()
    if hashlib.sha256(data).hexdigest() != entry["sha256"]:
        raise BundleIntegrityError(f"checksum mismatch for {entry['path']}")
    shape = tuple(entry["shape"])
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise BundleIntegrityError(
            f"blob {entry['path']} has {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def _grid_dict(grid: Grid) -> dict:
    return {"a": grid.a, "b": grid.b, "points": grid.n}


def _grid_from(obj: dict) -> Grid:
    return Grid(float(obj["a"]), float(obj["b"]), int(obj["points"]))


def save_bundle(fac: Factorization, out_dir, operator: OperatorSpec,
                family: FamilySpec) -> Path:
    """Write the factorization, its provenance, and certificate to out_dir."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    blobs = {
        "hilbert_matrix": _write_blob(root, "hilbert_matrix", fac.hilbert.matrix),
        "projector_basis": _write_blob(root, "projector_basis", fac.projector.basis),
        "decoder_basis": _write_blob(root, "decoder_basis", fac.decoder.basis.matrix),
        "decoder_coords": _write_blob(root, "decoder_coords", fac.decoder.coords),
        "centers": _write_blob(root, "centers", fac.sample.center_matrix()),
    }
    if isinstance(fac.latent, McShaneMap):
        blobs["latent_sites"] = _write_blob(root, "latent_sites", fac.latent.sites)
        blobs["latent_values"] = _write_blob(root, "latent_values", fac.latent.values)
        latent = {"kind": "mcshane", "variant": fac.latent.variant,
                  "modulus": fac.latent.modulus.to_dict(),
                  "lo": fac.latent.lo.tolist(), "hi": fac.latent.hi.tolist()}
    else:
        blobs["poly_coeffs"] = _write_blob(root, "poly_coeffs", fac.latent.coeffs)
        latent = {"kind": "poly", "degree": fac.latent.degree,
                  "n_vars": fac.latent.n_vars,
                  "exponents": fac.latent.exponents.tolist()}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "mode": fac.mode,
        "latent": latent,
        "grid": _grid_dict(fac.hilbert.grid),
        "out_grid": _grid_dict(fac.decoder.codomain_grid),
        "hilbert_blocks": [list(b) for b in fac.hilbert.blocks],
        "hilbert_weights": list(fac.hilbert.weights),
        "projector": {"delta_lat": fac.projector.delta_lat,
                      "mode": fac.projector.mode},
        "decoder_rank_tol": fac.decoder.rank_tol,
        "sample": {"delta": fac.sample.delta, "seed": fac.sample.seed},
        "fam_in": family_to_dict(fac.fam_in),
        "p_out": (family_to_dict(fac.p_out)
                  if isinstance(fac.p_out, SeminormFamily)
                  else seminorm_to_dict(fac.p_out)),
        "moduli": {k: v.to_dict() for k, v in fac.moduli.items()},
        "params": fac.params,
        "certificate": fac.certificate.to_dict(),
        "operator": operator.to_dict(),
        "family": family.to_dict(),
        "blobs": blobs,
    }
    text = json.dumps(manifest, sort_keys=True, indent=1)
    (root / MANIFEST).write_text(text + "\n")
    (root / "certificate.json").write_text(
        json.dumps(fac.certificate.to_dict(), sort_keys=True, indent=1) + "\n")
    return root


@dataclass(frozen=True)
class LoadedBundle:
    factorization: Factorization
    operator: OperatorSpec
    family: FamilySpec
    manifest: dict


def load_bundle(bundle_dir) -> LoadedBundle:
    """Reconstruct a factorization and its provenance from disk."""
    root = Path(bundle_dir)
    path = root / MANIFEST
    if not path.exists():
        raise BundleIntegrityError(f"no {MANIFEST} in {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleIntegrityError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise BundleIntegrityError(
            f"unrecognized bundle format {manifest.get('format')!r}")
    blobs = manifest["blobs"]
    grid = _grid_from(manifest["grid"])
    out_grid = _grid_from(manifest["out_grid"])
    hilbert = Hilbertization(
        matrix=_read_blob(root, blobs["hilbert_matrix"]),
        blocks=tuple((b[0], int(b[1]), int(b[2]))
                     for b in manifest["hilbert_blocks"]),
        weights=tuple(float(w) for w in manifest["hilbert_weights"]),
        grid=grid,
    )
    projector = Projector(
        basis=_read_blob(root, blobs["projector_basis"]),
        delta_lat=float(manifest["projector"]["delta_lat"]),
        mode=manifest["projector"]["mode"],
    )
    basis = LinearOperatorMatrix(
        _read_blob(root, blobs["decoder_basis"]),
        domain_tag="latent", codomain_tag=out_grid.tag, codomain_grid=out_grid,
    )
    decoder = Decoder(basis=basis,
                      coords=_read_blob(root, blobs["decoder_coords"]),
                      rank_tol=float(manifest["decoder_rank_tol"]))
    lat = manifest["latent"]
    if lat["kind"] == "mcshane":
        sites = _read_blob(root, blobs["latent_sites"])
        values = _read_blob(root, blobs["latent_values"])
        latent = McShaneMap(
            sites=sites, values=values,
            modulus=ModulusData.from_dict(lat["modulus"]),
            lo=np.asarray(lat["lo"], dtype=float),
            hi=np.asarray(lat["hi"], dtype=float),
            variant=lat["variant"],
        )
    else:
        latent = PolyMap(
            exponents=np.asarray(lat["exponents"], dtype=int),
            coeffs=_read_blob(root, blobs["poly_coeffs"]),
            degree=int(lat["degree"]), n_vars=int(lat["n_vars"]),
        )
    family = FamilySpec.from_dict(manifest["family"])
    operator = OperatorSpec.from_dict(manifest["operator"])
    centers_mat = _read_blob(root, blobs["centers"])
    sample = CompactSample(
        centers=tuple(GridFunction(row, grid) for row in centers_mat),
        delta={k: float(v) for k, v in manifest["sample"]["delta"].items()},
        sampler=family,
        seed=int(manifest["sample"]["seed"]),
    )
    p_out_obj = manifest["p_out"]
    p_out = (family_from_dict(p_out_obj) if "seminorms" in p_out_obj
             else seminorm_from_dict(p_out_obj))
    fac = Factorization(
        mode=manifest["mode"],
        hilbert=hilbert,
        projector=projector,
        latent=latent,
        decoder=decoder,
        sample=sample,
        fam_in=family_from_dict(manifest["fam_in"]),
        p_out=p_out,
        certificate=Certificate.from_dict(manifest["certificate"]),
        moduli={k: ModulusData.from_dict(v)
                for k, v in manifest["moduli"].items()},
        params=manifest["params"],
    )
    return LoadedBundle(factorization=fac, operator=operator, family=family,
                        manifest=manifest)
