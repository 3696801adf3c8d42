"""Command-line pipeline: synth, encode, forward, decode, eval, export-colored.

Every stage reads and writes plain files (OBJ/JSON/CSV/NPZ/PLY) so each step
is independently scriptable and byte-reproducible for fixed seeds. Exit codes:
0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import fields, geometry, metrics, network, synthetic
from .errors import EmptyField, ToothfieldError

DEFAULT_N_POINTS = 2048


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="toothfield",
                     description="dense field coding pipeline for tooth landmarks/axes")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-category", type=int, default=10)

    p = sub.add_parser("encode", help="sample, normalize and encode ground-truth fields")
    p.add_argument("--mesh", help="mesh file (single-tooth mode)")
    p.add_argument("--annotation", help="annotation JSON (single-tooth mode)")
    p.add_argument("--manifest", help="corpus manifest (batch mode)")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=fields.DEFAULT_SIGMA)
    p.add_argument("--n-points", type=int, default=DEFAULT_N_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("forward", help="run the network forward pass on a cloud CSV")
    p.add_argument("--cloud", required=True)
    p.add_argument("--weights", help="weights .npz (omit for seeded random weights)")
    p.add_argument("--config", help="network config JSON (omit for defaults)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("decode", help="decode fields back to landmarks and axes")
    p.add_argument("--cloud")
    p.add_argument("--dist")
    p.add_argument("--vec")
    p.add_argument("--counts", help="per-kind landmark counts, e.g. co=2,cu=4,fa=1,oc=1")
    p.add_argument("--annotation", help="derive counts from this annotation")
    p.add_argument("--manifest", help="corpus manifest (batch mode)")
    p.add_argument("--encode-dir", help="directory holding encode outputs (batch mode)")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=fields.DEFAULT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="score decoded features against ground truth")
    p.add_argument("--decoded")
    p.add_argument("--annotation")
    p.add_argument("--transform")
    p.add_argument("--manifest")
    p.add_argument("--encode-dir")
    p.add_argument("--decode-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--axis-mode", choices=("directed", "undirected"), default="directed")

    p = sub.add_parser("export-colored", help="write a field column as a colored PLY")
    p.add_argument("--cloud", required=True)
    p.add_argument("--field", required=True, help="distance field CSV")
    p.add_argument("--column", required=True, choices=[k.lower() for k in fields.LANDMARK_KINDS])
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = synthetic.default_corpus_specs(args.seed, args.per_category)
    teeth = []
    for i, spec in enumerate(specs):
        tooth_id = f"tooth_{i:03d}_{spec.category}"
        mesh, landmarks, axes = synthetic.generate_tooth(spec)
        mesh_name = f"{tooth_id}.obj"
        ann_name = f"{tooth_id}.json"
        geometry.save_mesh_obj(mesh, out / mesh_name)
        fields.write_annotation(out / ann_name, tooth_id, spec.category, landmarks, axes)
        teeth.append({
            "id": tooth_id,
            "seed": spec.seed,
            "category": spec.category,
            "mesh": mesh_name,
            "annotation": ann_name,
        })
    manifest = {"teeth": teeth, "per_category": args.per_category, "base_seed": args.seed}
    with open(out / "manifest.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(teeth)} teeth to {out}")
    return 0


def _read_manifest(path: Path):
    with open(path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    base = path.parent
    return [(t["id"], base / t["mesh"], base / t["annotation"]) for t in manifest["teeth"]]


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

def _encode_one(task) -> str:
    tooth_id, mesh_path, ann_path, out_dir, sigma, n_points, seed = task
    mesh = geometry.load_mesh(mesh_path)
    _, _, landmarks, axes = fields.read_annotation(ann_path)

    cloud_model = geometry.sample_surface(mesh, n_points, seed)
    cloud, transform = geometry.normalize_unit_ball(cloud_model)
    mesh_norm = geometry.transform_mesh(mesh, transform)
    landmarks_norm = fields.LandmarkSet([
        fields.Landmark(transform.to_normalized(lm.position), lm.kind)
        for lm in landmarks.landmarks
    ])

    dist = fields.encode_landmarks(mesh_norm, cloud, landmarks_norm, sigma)
    vec = np.zeros((cloud.n_points, 3, len(fields.AXIS_KINDS)))
    by_kind = {ax.kind: ax for ax in axes}
    for ki, kind in enumerate(fields.AXIS_KINDS):
        if kind in by_kind:
            _, col = fields.encode_axis(cloud, by_kind[kind].direction, kind)
            vec[:, :, ki] = col
    vec_field = fields.ProjectionVectorField(vec)

    out_dir = Path(out_dir)
    geometry.write_cloud_csv(cloud, out_dir / f"{tooth_id}_cloud.csv")
    fields.write_distance_field_csv(out_dir / f"{tooth_id}_dist.csv", dist)
    fields.write_vector_field_csv(out_dir / f"{tooth_id}_vec.csv", vec_field)
    with open(out_dir / f"{tooth_id}_transform.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump({"center": [float(x) for x in transform.center],
                   "scale": transform.scale}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return tooth_id


def _cmd_encode(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        entries = _read_manifest(Path(args.manifest))
    elif args.mesh and args.annotation:
        entries = [(Path(args.mesh).stem, Path(args.mesh), Path(args.annotation))]
    else:
        raise ToothfieldError("encode needs --manifest or both --mesh and --annotation")
    tasks = [(tid, mesh, ann, str(out), args.sigma, args.n_points, args.seed)
             for tid, mesh, ann in entries]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for tid in pool.map(_encode_one, tasks):
                print(f"encoded {tid}")
    else:
        for task in tasks:
            print(f"encoded {_encode_one(task)}")
    return 0


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _cmd_forward(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud = geometry.read_cloud_csv(args.cloud)
    config = network.load_network_config(args.config) if args.config else network.NetworkConfig()
    if args.weights:
        weights = network.NetworkWeights.load(args.weights, config)
        source = "file"
    else:
        weights = network.NetworkWeights.random(config, args.seed)
        source = "random"
    pred = network.predict(cloud, weights, config, seed=args.seed)

    base = Path(args.cloud).stem
    if base.endswith("_cloud"):
        base = base[:-len("_cloud")]
    dist = fields.DistanceField(pred.distance_fields[:, 0, :])
    vec = fields.ProjectionVectorField(pred.projection_vectors)
    fields.write_distance_field_csv(out / f"{base}_pred_dist.csv", dist)
    fields.write_vector_field_csv(out / f"{base}_pred_vec.csv", vec)
    with open(out / f"{base}_forward.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump({
            "seed": args.seed,
            "weights": source,
            "norm_mode": weights.norm_mode,
            "config_checksum": config.checksum(),
            "n_points": cloud.n_points,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"forward pass on {cloud.n_points} points -> {out / (base + '_pred_dist.csv')}")
    return 0


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------

def _parse_counts(text: str) -> Dict[str, int]:
    counts = {}
    for item in text.split(","):
        if not item:
            continue
        key, _, value = item.partition("=")
        kind = key.strip().upper()
        if kind not in fields.LANDMARK_KINDS:
            raise ToothfieldError(f"unknown landmark kind in --counts: {key!r}")
        counts[kind] = int(value)
    if not counts:
        raise ToothfieldError("--counts parsed to nothing")
    return counts


def _decode_one(task) -> str:
    tooth_id, cloud_path, dist_path, vec_path, counts, threshold, seed, out_dir = task
    cloud = geometry.read_cloud_csv(cloud_path)
    dist = fields.read_distance_field_csv(dist_path)
    vec = fields.read_vector_field_csv(vec_path)

    decoded_landmarks: Dict[str, List[List[float]]] = {}
    warnings: List[str] = []
    for kind, count in counts.items():
        if count < 1:
            continue
        try:
            centers = fields.decode_landmarks(cloud, dist.column(kind), count,
                                              threshold=threshold, seed=seed)
        except EmptyField:
            warnings.append(f"kind {kind}: field is empty, no landmarks decoded")
            continue
        decoded_landmarks[kind] = [[float(x) for x in c] for c in centers]

    decoded_axes = {}
    for kind in fields.AXIS_KINDS:
        axis = fields.decode_axis(cloud, vec.column(kind), kind)
        decoded_axes[kind] = {
            "point": [float(x) for x in axis.point],
            "direction": [float(x) for x in axis.direction],
            "degenerate": bool(axis.is_degenerate),
        }

    payload = {
        "tooth_id": tooth_id,
        "frame": "normalized",
        "threshold": threshold,
        "seed": seed,
        "landmarks": decoded_landmarks,
        "axes": decoded_axes,
        "warnings": warnings,
    }
    out_path = Path(out_dir) / f"{tooth_id}_decoded.json"
    with open(out_path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for w in warnings:
        print(f"warning [{tooth_id}]: {w}", file=sys.stderr)
    return tooth_id


def _counts_from_annotation(path) -> Dict[str, int]:
    _, _, landmarks, _ = fields.read_annotation(path)
    return {k: v for k, v in landmarks.counts().items() if v > 0}


def _cmd_decode(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    if args.manifest:
        if not args.encode_dir:
            raise ToothfieldError("batch decode needs --encode-dir")
        enc = Path(args.encode_dir)
        for tooth_id, _, ann_path in _read_manifest(Path(args.manifest)):
            counts = _parse_counts(args.counts) if args.counts \
                else _counts_from_annotation(ann_path)
            tasks.append((tooth_id, enc / f"{tooth_id}_cloud.csv",
                          enc / f"{tooth_id}_dist.csv", enc / f"{tooth_id}_vec.csv",
                          counts, args.threshold, args.seed, str(out)))
    else:
        if not (args.cloud and args.dist and args.vec):
            raise ToothfieldError("decode needs --cloud, --dist and --vec (or --manifest)")
        if args.counts:
            counts = _parse_counts(args.counts)
        elif args.annotation:
            counts = _counts_from_annotation(args.annotation)
        else:
            raise ToothfieldError("decode needs --counts or --annotation")
        tooth_id = Path(args.cloud).stem
        if tooth_id.endswith("_cloud"):
            tooth_id = tooth_id[:-len("_cloud")]
        tasks.append((tooth_id, Path(args.cloud), Path(args.dist), Path(args.vec),
                      counts, args.threshold, args.seed, str(out)))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for tid in pool.map(_decode_one, tasks):
                print(f"decoded {tid}")
    else:
        for task in tasks:
            print(f"decoded {_decode_one(task)}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _load_transform(path) -> geometry.NormalizationTransform:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    return geometry.NormalizationTransform(np.asarray(payload["center"]),
                                           float(payload["scale"]))


def _eval_one(tooth_id: str, decoded_path, ann_path, transform_path,
              axis_mode: str) -> metrics.ToothEvalResult:
    with open(decoded_path, "r", encoding="ascii") as fh:
        decoded = json.load(fh)
    ann_id, _, gt_landmarks, gt_axes = fields.read_annotation(ann_path)
    if decoded.get("tooth_id") != ann_id:
        raise ToothfieldError(
            f"tooth ID mismatch: decoded {decoded.get('tooth_id')!r} vs annotation {ann_id!r}")
    transform = _load_transform(transform_path)

    result = metrics.ToothEvalResult(tooth_id=tooth_id, axis_mode=axis_mode)
    for kind in fields.LANDMARK_KINDS:
        gt_kind = gt_landmarks.of_kind(kind)
        if not gt_kind:
            continue
        gt_norm = fields.LandmarkSet([
            fields.Landmark(transform.to_normalized(lm.position), kind)
            for lm in gt_kind
        ])
        pred = np.asarray(decoded.get("landmarks", {}).get(kind, []), dtype=np.float64)
        errs = metrics.landmark_error(pred.reshape(-1, 3), gt_norm, transform)
        result.landmark_errors_mm[kind] = [float(e) for e in errs]
    gt_by_kind = {ax.kind: ax for ax in gt_axes}
    for kind in fields.AXIS_KINDS:
        if kind not in gt_by_kind or kind not in decoded.get("axes", {}):
            continue
        d = decoded["axes"][kind]
        pred_axis = fields.ToothAxis(d["point"], d["direction"], kind=kind)
        gt_axis = gt_by_kind[kind]
        gt_axis_norm = fields.ToothAxis(transform.to_normalized(gt_axis.point),
                                        fields.canonicalize_direction(gt_axis.direction),
                                        kind=kind)
        result.axis_errors_deg[kind] = metrics.axis_error(pred_axis, gt_axis_norm, axis_mode)
    return result


def _cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    if args.manifest:
        if not (args.encode_dir and args.decode_dir):
            raise ToothfieldError("batch eval needs --encode-dir and --decode-dir")
        enc, dec = Path(args.encode_dir), Path(args.decode_dir)
        for tooth_id, _, ann_path in _read_manifest(Path(args.manifest)):
            results.append(_eval_one(tooth_id, dec / f"{tooth_id}_decoded.json", ann_path,
                                     enc / f"{tooth_id}_transform.json", args.axis_mode))
    else:
        if not (args.decoded and args.annotation and args.transform):
            raise ToothfieldError(
                "eval needs --decoded, --annotation and --transform (or --manifest)")
        tooth_id = Path(args.decoded).stem
        if tooth_id.endswith("_decoded"):
            tooth_id = tooth_id[:-len("_decoded")]
        results.append(_eval_one(tooth_id, args.decoded, args.annotation,
                                 args.transform, args.axis_mode))
    report = metrics.build_report(results)
    with open(out / "report.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write(report.to_text())
    metrics.write_per_tooth_csv(out / "per_tooth.csv", results)
    metrics.write_histogram_csv(out / "hist_landmarks.csv", report.landmark_hist,
                                metrics.LANDMARK_BIN_MM, "landmark error histogram (mm bins)")
    metrics.write_histogram_csv(out / "hist_axes.csv", report.axis_hist,
                                metrics.AXIS_BIN_DEG, "axis error histogram (deg bins)")
    print(report.to_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# export-colored
# ---------------------------------------------------------------------------

def _ramp_color(v: float):
    v = min(1.0, max(0.0, v))
    return int(v * 255.0 + 0.5), 0, int((1.0 - v) * 255.0 + 0.5)


def _cmd_export_colored(args) -> int:
    cloud = geometry.read_cloud_csv(args.cloud)
    dist = fields.read_distance_field_csv(args.field)
    column = dist.column(args.column.upper())
    if len(column) != cloud.n_points:
        raise ToothfieldError(
            f"field column length {len(column)} != cloud size {cloud.n_points}")
    with open(args.out, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.n_points}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for p, v in zip(cloud.points, column):
            r, g, b = _ramp_color(float(v))
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {r} {g} {b}\n")
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "encode": _cmd_encode,
    "forward": _cmd_forward,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "export-colored": _cmd_export_colored,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ToothfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
