"""Command-line interface.

Subcommands: synth, refine, segment, consistency, densify, mesh,
pipeline, metrics.  Every subcommand is a thin wrapper over the library
operations; `pipeline` chains them over a scene directory and writes a
machine-readable report.  Set MVG_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from ._kernels import BACKEND
from .consistency import ConsistencyThresholds, RegionThresholds, consistency_mask, \
    select_source_views
from .densify import DensifyConfig, adaptive_densify, refine_view
from .errors import ConfigError, MvgError, SceneFormatError
from .harness import (
    PlaneSurface, RigSpec, SphereSurface, SyntheticScene, angular_error,
    chamfer_distance, make_scene, surface_from_dict,
)
from .maps import DepthMap
from .meshing import MeshConfig, euler_characteristic, extract_mesh
from .quantile import KdeConfig, segment_depth
from .refine import RefineConfig, edge_aware_discrepancy, estimate_normals, \
    joint_bilateral_filter, refine_depth
from .surfels import SurfelCloud

log = logging.getLogger("mvg")

REPORT_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INTERNAL = 3


# ---------------------------------------------------------------------------
# Pipeline configuration

@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    refine: RefineConfig = dataclasses.field(default_factory=RefineConfig)
    kde: KdeConfig = dataclasses.field(default_factory=KdeConfig)
    consistency: RegionThresholds = dataclasses.field(default_factory=RegionThresholds)
    densify: DensifyConfig = dataclasses.field(default_factory=DensifyConfig)
    mesh: MeshConfig = dataclasses.field(default_factory=MeshConfig)
    threads: int = 1

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        bbox = doc["mesh"]["bbox"]
        if bbox is not None:
            doc["mesh"]["bbox"] = [list(map(float, bbox[0])), list(map(float, bbox[1]))]
        return doc

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def _build_config(cls, doc: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")
    return cls(**doc)


def config_from_dict(doc: dict) -> PipelineConfig:
    """Strict construction: unknown keys anywhere are rejected."""
    known = {"refine", "kde", "consistency", "densify", "mesh", "threads"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    kw = {}
    if "refine" in doc:
        kw["refine"] = _build_config(RefineConfig, doc["refine"], "refine")
    if "kde" in doc:
        kw["kde"] = _build_config(KdeConfig, doc["kde"], "kde")
    if "consistency" in doc:
        sub = dict(doc["consistency"])
        regions = {}
        for name in ("near", "mid", "far"):
            if name in sub:
                regions[name] = _build_config(
                    ConsistencyThresholds, sub.pop(name), f"consistency.{name}"
                )
        if sub:
            raise ConfigError(f"unknown keys in [consistency]: {sorted(sub)}")
        kw["consistency"] = RegionThresholds(**regions)
    if "densify" in doc:
        kw["densify"] = _build_config(DensifyConfig, doc["densify"], "densify")
    if "mesh" in doc:
        sub = dict(doc["mesh"])
        if sub.get("bbox") is not None:
            lo, hi = sub["bbox"]
            sub["bbox"] = (tuple(map(float, lo)), tuple(map(float, hi)))
        kw["mesh"] = _build_config(MeshConfig, sub, "mesh")
    if "threads" in doc:
        kw["threads"] = int(doc["threads"])
    return PipelineConfig(**kw)


def config_from_toml(path) -> PipelineConfig:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise SceneFormatError(path, "config file not found")
    except tomllib.TOMLDecodeError as exc:
        raise SceneFormatError(path, f"invalid TOML ({exc})")
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Pipeline

def _refine_all(views, cfg: PipelineConfig):
    """Refine every view; parallel over views, deterministic merge by id."""
    def work(view):
        return view.id, refine_view(view, cfg.refine)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = dict(pool.map(work, views))
    else:
        results = dict(map(work, views))
    refined_views = {v.id: v.with_depth(results[v.id][0]) for v in views}
    normals = {v.id: results[v.id][1] for v in views}
    return refined_views, normals


def run_pipeline(scene_dir, out_dir, cfg: PipelineConfig):
    """refine -> segment -> consistency -> densify -> mesh over a scene dir.

    Writes refined depths and normals, consistency masks, the densified
    cloud (PLY), the mesh (PLY + OBJ), and report.json.  Returns
    (exit_status, report_dict).
    """
    out = Path(out_dir)
    report = {"schema_version": REPORT_SCHEMA_VERSION, "backend": BACKEND,
              "config": cfg.to_dict(), "stages": {}, "views": {}}
    try:
        views = io.load_views(scene_dir)
        meta = io.load_scene_meta(scene_dir)
    except (SceneFormatError, ConfigError) as exc:
        log.error("bad input: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT, report

    try:
        for sub in ("refined", "normals", "masks"):
            (out / sub).mkdir(parents=True, exist_ok=True)

        t0 = time.perf_counter()
        refined_views, normal_maps = _refine_all(views, cfg)
        report["stages"]["refine_s"] = time.perf_counter() - t0
        for v in views:
            io.write_pfm(out / "refined" / f"{v.id:03d}.pfm", refined_views[v.id].depth.values)
            io.write_normals(out / "normals" / f"{v.id:03d}.pfm", normal_maps[v.id])
            report["views"][v.id] = {
                "edge_discrepancy": edge_aware_discrepancy(
                    v.depth, refined_views[v.id].depth, v.image
                )
            }
        log.info("refined %d views", len(views))

        t0 = time.perf_counter()
        cloud = SurfelCloud.empty()
        masks = {}
        cloud, densify_report = adaptive_densify(
            cloud, views, cfg.kde, cfg.consistency, cfg.densify,
            refine_cfg=cfg.refine,
            precomputed=(refined_views, normal_maps),
            collect_masks=masks,
        )
        report["stages"]["densify_s"] = time.perf_counter() - t0
        for vid, mask in masks.items():
            io.write_image(out / "masks" / f"{vid:03d}.png",
                           _mask_image(mask))
        report["densify"] = {
            "new_per_region": densify_report.new_per_region,
            "processed_ids": densify_report.processed_ids,
            "per_view": {str(k): v for k, v in densify_report.per_view.items()},
            "surfels": len(cloud),
        }
        io.write_surfels(out / "cloud.ply", cloud)
        log.info("densified %d surfels", len(cloud))

        t0 = time.perf_counter()
        mesh = extract_mesh(cloud, list(refined_views.values()), cfg.mesh)
        report["stages"]["mesh_s"] = time.perf_counter() - t0
        io.write_mesh_ply(out / "mesh.ply", mesh)
        io.write_mesh_obj(out / "mesh.obj", mesh)
        report["mesh"] = {
            "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles),
            "euler_characteristic": euler_characteristic(mesh),
        }
        log.info("meshed: %d vertices, %d triangles",
                 len(mesh.vertices), len(mesh.triangles))

        if meta and "surface" in meta:
            surface = surface_from_dict(meta["surface"])
            report["metrics"] = {
                "chamfer": chamfer_distance(mesh, surface, samples=5000),
            }
            gt_angular = _gt_normal_errors(scene_dir, views, normal_maps)
            if gt_angular:
                report["metrics"]["normal_error_deg"] = gt_angular
        with open(out / "report.json", "w") as f:
            json.dump(report, f, indent=1, sort_keys=True, default=float)
            f.write("\n")
        return EXIT_OK, report
    except (SceneFormatError, ConfigError) as exc:
        log.error("bad input: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT, report
    except (MvgError, AssertionError) as exc:
        log.error("internal failure: %s", exc)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL, report


def _mask_image(mask: np.ndarray):
    from .maps import ImageBuffer
    rgb = np.repeat(mask[:, :, None].astype(np.float64), 3, axis=2)
    return ImageBuffer(rgb)


def _gt_normal_errors(scene_dir, views, normal_maps):
    out = {}
    for v in views:
        gt = io.load_gt_normals(scene_dir, v.id)
        if gt is None:
            continue
        err = angular_error(normal_maps[v.id], gt)
        out[str(v.id)] = {"mean": err.mean_deg, "median": err.median_deg}
    return out


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_synth(args):
    if args.shape == "sphere":
        surface = SphereSurface(center=(0.0, 0.0, 5.0), radius=args.radius)
    else:
        tilt = math.radians(args.tilt_deg)
        normal = (0.0, math.sin(tilt), -math.cos(tilt))
        surface = PlaneSurface(point=(0.0, 0.0, 5.0), normal=normal)
    rig = RigSpec(count=args.views, distance=args.distance, cone_deg=args.cone_deg,
                  fov_deg=args.fov_deg, width=args.size, height=args.size)
    scene = make_scene(surface, rig, noise_sigma=args.noise, seed=args.seed)
    meta = {
        "surface": scene.surface.to_dict(),
        "rig": dataclasses.asdict(rig),
        "noise_sigma": args.noise,
        "seed": args.seed,
    }
    io.save_scene(scene.views, args.out, gt_normals=scene.gt_normals, scene_meta=meta)
    print(f"wrote {len(scene.views)} views to {args.out}")
    return EXIT_OK


def _refine_config(args) -> RefineConfig:
    return RefineConfig(sigma_spatial=args.sigma_spatial, sigma_range=args.sigma_range,
                        alpha=args.alpha)


def _cmd_refine(args):
    cfg = _refine_config(args)
    depth = io.read_depth(args.depth)
    image = io.read_image(args.image)
    _, k, pose = io.read_camera(args.camera)
    smoothed = joint_bilateral_filter(depth, image, cfg)
    normals = estimate_normals(smoothed, k, cfg)
    refined = refine_depth(smoothed, normals, image, k, cfg)
    io.write_pfm(args.out, refined.values)
    if args.normals_out:
        io.write_normals(args.normals_out, normals)
    print(f"refined depth -> {args.out}")
    return EXIT_OK


def _cmd_segment(args):
    depth = io.read_depth(args.depth)
    cfg = KdeConfig(p_near=args.p_near, p_far=args.p_far, grid_size=args.grid_size)
    seg = segment_depth(depth, cfg)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for name, mask in (("near", seg.near_mask), ("mid", seg.mid_mask), ("far", seg.far_mask)):
        io.write_image(f"{prefix}_{name}.png", _mask_image(mask))
    doc = {
        "q_near": seg.q_near,
        "q_far": seg.q_far,
        "bandwidth": seg.density.bandwidth if seg.density else 0.0,
        "grid_size": cfg.grid_size,
        "p_near": cfg.p_near,
        "p_far": cfg.p_far,
        "degenerate": seg.degenerate,
    }
    with open(f"{prefix}.json", "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"q_near={seg.q_near:.6g} q_far={seg.q_far:.6g} -> {prefix}.json")
    return EXIT_OK


def _segmentation_from_report(path, depth: DepthMap):
    with open(path) as f:
        doc = json.load(f)
    for field in ("q_near", "q_far"):
        if field not in doc:
            raise SceneFormatError(path, f"missing field {field!r}")
    from .quantile import DepthSegmentation
    valid = depth.mask
    near = valid & (depth.values <= doc["q_near"])
    far = valid & (depth.values >= doc["q_far"]) & ~near
    return DepthSegmentation(
        near_mask=near, mid_mask=valid & ~near & ~far, far_mask=far,
        q_near=float(doc["q_near"]), q_far=float(doc["q_far"]),
        density=None, cdf=None,
    )


def _thresholds(args) -> RegionThresholds:
    return RegionThresholds(
        near=ConsistencyThresholds(args.tau_p, args.tau_d_near_far, args.min_views),
        mid=ConsistencyThresholds(args.tau_p, args.tau_d_mid, args.min_views),
        far=ConsistencyThresholds(args.tau_p, args.tau_d_near_far, args.min_views),
    )


def _cmd_consistency(args):
    views = io.load_views(args.views)
    by_id = {v.id: v for v in views}
    if args.ref not in by_id:
        raise SceneFormatError(args.views, f"no view with id {args.ref}")
    ref = by_id[args.ref]
    if args.seg:
        seg = _segmentation_from_report(args.seg, ref.depth)
    else:
        seg = segment_depth(ref.depth, KdeConfig())
    thr = _thresholds(args)
    srcs = select_source_views(views, ref)
    mask, votes = consistency_mask(ref, srcs, seg, thr)
    io.write_image(args.out, _mask_image(mask))
    hist = np.bincount(votes[ref.depth.mask], minlength=len(srcs) + 1)
    doc = {
        "ref": args.ref,
        "sources": [v.id for v in srcs],
        "pass_counts": {
            "near": int(np.count_nonzero(mask & seg.near_mask)),
            "mid": int(np.count_nonzero(mask & seg.mid_mask)),
            "far": int(np.count_nonzero(mask & seg.far_mask)),
        },
        "valid_pixels": int(np.count_nonzero(ref.depth.mask)),
        "passed_pixels": int(np.count_nonzero(mask)),
        "vote_histogram": hist.tolist(),
    }
    if args.report:
        with open(args.report, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
    print(f"passed {doc['passed_pixels']}/{doc['valid_pixels']} pixels -> {args.out}")
    return EXIT_OK


def _cmd_densify(args):
    views = io.load_views(args.scene)
    cloud = io.read_surfels(args.cloud) if args.cloud else SurfelCloud.empty()
    kde = KdeConfig(p_near=args.p_near, p_far=args.p_far)
    cfg = DensifyConfig(scale_threshold=args.scale_threshold, stride=args.stride)
    thr = _thresholds(args)
    cloud, rep = adaptive_densify(cloud, views, kde, thr, cfg)
    io.write_surfels(args.out, cloud)
    if args.report:
        with open(args.report, "w") as f:
            json.dump({
                "new_per_region": rep.new_per_region,
                "processed_ids": rep.processed_ids,
                "per_view": {str(k): v for k, v in rep.per_view.items()},
                "surfels": len(cloud),
            }, f, indent=1, sort_keys=True)
            f.write("\n")
    print(f"{len(cloud)} surfels -> {args.out}")
    return EXIT_OK


def _cmd_mesh(args):
    cloud = io.read_surfels(args.cloud)
    views = io.load_views(args.views)
    cfg = MeshConfig(
        base_voxel=args.base_voxel, voxel_min=args.voxel_min, voxel_max=args.voxel_max,
        smooth_steps=args.steps, smooth_mesh=not args.no_smooth,
    )
    refined = {}
    rc = RefineConfig()
    for v in views:
        depth, _ = refine_view(v, rc)
        refined[v.id] = v.with_depth(depth)
    mesh = extract_mesh(cloud, list(refined.values()), cfg)
    io.write_mesh_ply(args.out, mesh)
    if args.obj:
        io.write_mesh_obj(args.obj, mesh)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles -> {args.out}")
    return EXIT_OK


def _cmd_pipeline(args):
    if args.config:
        cfg = config_from_toml(args.config)
    else:
        cfg = PipelineConfig()
    mesh_kw = {}
    if args.base_voxel is not None:
        scale = args.base_voxel / cfg.mesh.base_voxel
        mesh_kw = {
            "base_voxel": args.base_voxel,
            "voxel_min": cfg.mesh.voxel_min * scale,
            "voxel_max": cfg.mesh.voxel_max * scale,
        }
    if mesh_kw:
        cfg = cfg.replace(mesh=dataclasses.replace(cfg.mesh, **mesh_kw))
    if args.threads is not None:
        cfg = cfg.replace(threads=args.threads)
    status, report = run_pipeline(args.scene, args.out, cfg)
    if status == EXIT_OK:
        print(f"pipeline ok: {report['densify']['surfels']} surfels, "
              f"{report['mesh']['triangles']} triangles -> {args.out}")
    return status


def _cmd_metrics(args):
    doc = {"schema_version": REPORT_SCHEMA_VERSION}
    views = io.load_views(args.scene)
    meta = io.load_scene_meta(args.scene)
    if args.mesh:
        mesh = io.read_mesh_ply(args.mesh)
        doc["mesh"] = {
            "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles),
            "euler_characteristic": euler_characteristic(mesh),
        }
        if meta and "surface" in meta:
            surface = surface_from_dict(meta["surface"])
            doc["mesh"]["chamfer"] = chamfer_distance(mesh, surface, samples=args.samples)
    normal_errors = {}
    rc = RefineConfig()
    for v in views:
        gt = io.load_gt_normals(args.scene, v.id)
        if gt is None:
            continue
        est = estimate_normals(v.depth, v.intrinsics, rc)
        err = angular_error(est, gt)
        normal_errors[str(v.id)] = {"mean": err.mean_deg, "median": err.median_deg}
    if normal_errors:
        doc["normal_error_deg"] = normal_errors
    if args.refined_dir:
        edge = {}
        for v in views:
            p = Path(args.refined_dir) / f"{v.id:03d}.pfm"
            if p.exists():
                refined = io.read_depth(p)
                edge[str(v.id)] = edge_aware_discrepancy(v.depth, refined, v.image)
        doc["edge_discrepancy"] = edge
    text = json.dumps(doc, indent=1, sort_keys=True, default=float)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def _add_threshold_flags(p):
    p.add_argument("--tau-p", type=float, default=1.0,
                   help="pixel reprojection tolerance (px)")
    p.add_argument("--tau-d-near-far", type=float, default=0.01,
                   help="relative depth tolerance for near/far regions")
    p.add_argument("--tau-d-mid", type=float, default=0.001,
                   help="relative depth tolerance for the mid region")
    p.add_argument("--min-views", type=int, default=3,
                   help="source views that must agree")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mvg",
        description="Multi-view depth refinement, densification, and meshing toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--shape", choices=("sphere", "plane"), default="sphere")
    p.add_argument("--views", type=int, default=6)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--tilt-deg", type=float, default=30.0)
    p.add_argument("--distance", type=float, default=5.0)
    p.add_argument("--cone-deg", type=float, default=35.0)
    p.add_argument("--fov-deg", type=float, default=60.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("refine", help="refine one depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normals-out")
    p.add_argument("--sigma-spatial", type=float, default=1.0)
    p.add_argument("--sigma-range", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=10.0)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("segment", help="near/mid/far segmentation of a depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--p-near", type=float, default=0.15)
    p.add_argument("--p-far", type=float, default=0.85)
    p.add_argument("--grid-size", type=int, default=1024)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("consistency", help="multi-view consistency mask for one view")
    p.add_argument("--ref", type=int, required=True)
    p.add_argument("--views", required=True, help="scene directory")
    p.add_argument("--seg", help="segment report JSON (computed when omitted)")
    p.add_argument("--out", required=True, help="mask PNG")
    p.add_argument("--report")
    _add_threshold_flags(p)
    p.set_defaults(func=_cmd_consistency)

    p = sub.add_parser("densify", help="one adaptive densification pass")
    p.add_argument("--scene", required=True)
    p.add_argument("--cloud", help="input surfel PLY (empty cloud when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--scale-threshold", type=float, default=0.05)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--p-near", type=float, default=0.15)
    p.add_argument("--p-far", type=float, default=0.85)
    _add_threshold_flags(p)
    p.set_defaults(func=_cmd_densify)

    p = sub.add_parser("mesh", help="extract a mesh from a surfel cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--views", required=True, help="scene directory")
    p.add_argument("--out", required=True)
    p.add_argument("--obj")
    p.add_argument("--base-voxel", type=float, default=0.003)
    p.add_argument("--voxel-min", type=float, default=0.001)
    p.add_argument("--voxel-max", type=float, default=0.005)
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--no-smooth", action="store_true")
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("pipeline", help="refine, segment, densify, and mesh a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML pipeline config")
    p.add_argument("--base-voxel", type=float,
                   help="override mesh voxel scale (min/max scale along)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("metrics", help="evaluate outputs against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--mesh")
    p.add_argument("--refined-dir")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_metrics)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("MVG_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SceneFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (MvgError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
