"""Command-line front door for the whole pipeline.

Sub-commands: synth, train, uq, render, eval, sweep, serve. Every run writes
a JSON config echo next to its primary output so results are reproducible;
failures exit non-zero with a one-line machine-parsable category.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import evaluation, laplace_uq, renderer, scene_io, server
from .errors import RayLaplaceError, ValidationError
from .field_core import Aabb, SceneSpec, TrainConfig, VoxelField, fit_field, make_synthetic_scene
from .laplace_uq import DeformationGrid, UqConfig, accumulate_hessian_diag, compute_uncertainty_field


def _echo_config(path, command, params):
    plain = {}
    for k, v in params.items():
        if k == "func":
            continue
        plain[k] = v.tolist() if isinstance(v, np.ndarray) else v
    doc = {"command": command, "params": plain}
    scene_io._atomic_write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v != ""]


# --------------------------------------------------------------------------
# sub-commands
# --------------------------------------------------------------------------

def cmd_synth(args):
    out = args.out
    os.makedirs(os.path.join(out, "images"), exist_ok=True)
    spec = SceneSpec(kind=args.kind, radius=args.radius)
    field = make_synthetic_scene(spec, args.resolution)
    scene_io.save_field(field, os.path.join(out, "gt.vxf"))

    train_cams = renderer.orbit_cameras(
        field.bounds, args.cameras, args.camera_distance, _csv_floats(args.elevations),
        fx=args.focal, width=args.width, height=args.height,
        azimuth_start_deg=args.azimuth_start, azimuth_span_deg=args.azimuth_span)
    test_cams = []
    if args.test_cameras > 0:
        test_cams = renderer.orbit_cameras(
            field.bounds, args.test_cameras, args.camera_distance, [args.test_elevation],
            fx=args.focal, width=args.width, height=args.height,
            azimuth_start_deg=args.azimuth_start + 360.0 / max(args.cameras, 1) / 2.0,
            azimuth_span_deg=args.azimuth_span)

    cams = train_cams + test_cams
    opts = renderer.RenderOptions(samples_per_ray=args.samples)
    files = []
    for i, cam in enumerate(cams):
        name = f"images/im_{i:03d}.png"
        scene_io.save_png(renderer.render_channels(field, cam, opts).rgb,
                          os.path.join(out, name))
        files.append(name)
    bundle = scene_io.SceneBundle(
        bounds=field.bounds, cameras=cams, image_files=files,
        train_indices=list(range(len(train_cams))),
        test_indices=list(range(len(train_cams), len(cams))), root=out)
    scene_io.save_scene(bundle, os.path.join(out, "scene.json"))
    _echo_config(os.path.join(out, "synth.config.json"), "synth", vars(args))
    print(f"wrote {out}/gt.vxf and {out}/scene.json with {len(cams)} cameras")
    return 0


def cmd_train(args):
    bundle = scene_io.load_scene(args.scene)
    cams = [bundle.cameras[i] for i in bundle.train_indices]
    images = bundle.load_images(bundle.train_indices)
    init = VoxelField(
        bundle.bounds,
        np.full((args.resolution,) * 3, args.init_raw_density, np.float32),
        np.zeros((args.resolution,) * 3 + (3,), np.float32))
    config = TrainConfig(iterations=args.iterations, learning_rate=args.learning_rate,
                         batch_rays=args.batch_rays, samples_per_ray=args.samples,
                         seed=args.seed)
    losses = []
    t0 = time.perf_counter()
    trained = fit_field(images, cams, init, config, loss_history=losses)
    wall = time.perf_counter() - t0
    scene_io.save_field(trained, args.out)
    _echo_config(args.out + ".config.json", "train",
                 {**vars(args), "final_loss": losses[-1] if losses else None,
                  "wall_seconds": wall})
    print(f"trained {args.iterations} iterations in {wall:.1f}s; "
          f"loss {losses[0]:.5f} -> {losses[-1]:.5f}" if losses else "no iterations")
    return 0


def cmd_uq(args):
    field = scene_io.load_field(args.field)
    # only cameras are read here; image data never enters the accumulation
    bundle = scene_io.load_scene(args.scene, require_images=False)
    cams = [bundle.cameras[i] for i in bundle.train_indices]
    config = UqConfig(grid_resolution=args.grid_resolution, lam=args.lam,
                      batches=args.batches, rays_per_batch=args.rays_per_batch,
                      samples_per_ray=args.samples, seed=args.seed)
    grid = DeformationGrid(config.grid_resolution, field.bounds)
    t0 = time.perf_counter()
    hess = accumulate_hessian_diag(field, grid, cams, config)
    uf = compute_uncertainty_field(hess)
    wall = time.perf_counter() - t0
    scene_io.save_uncertainty(uf, args.out)
    _echo_config(args.out + ".config.json", "uq",
                 {**vars(args), "lam_resolved": config.resolved_lam,
                  "rays": hess.ray_count, "wall_seconds": wall})
    print(f"accumulated {hess.ray_count} rays in {wall:.1f}s "
          f"(M={config.grid_resolution}, lam={config.resolved_lam:.3e})")
    return 0


def _camera_from_args(args, bundle):
    if args.pose is not None:
        pose = _csv_floats(args.pose)
        if len(pose) != 12:
            raise ValidationError("--pose needs 12 comma-separated floats")
        return renderer.Camera.from_pose12(pose, args.focal, args.focal,
                                           args.width / 2.0, args.height / 2.0,
                                           args.width, args.height)
    if bundle is None:
        raise ValidationError("--camera-index needs --scene")
    return bundle.cameras[args.camera_index]


def cmd_render(args):
    field = scene_io.load_field(args.field)
    uncertainty = scene_io.load_uncertainty(args.uncertainty) if args.uncertainty else None
    bundle = scene_io.load_scene(args.scene, require_images=False) if args.scene else None
    cam = _camera_from_args(args, bundle)
    opts = renderer.RenderOptions(samples_per_ray=args.samples, threshold=args.threshold)
    img = renderer.render_channels(field, cam, opts, uncertainty=uncertainty)
    channels = args.channels.split(",")
    for ch in channels:
        if ch == "rgb":
            scene_io.save_png(img.rgb, args.out + ".rgb.png")
        elif ch == "depth":
            scene_io.save_plane(img.depth, args.out + ".depth.imgf")
        elif ch == "opacity":
            scene_io.save_plane(img.opacity, args.out + ".opacity.imgf")
        elif ch == "unc":
            if img.log_uncertainty is None:
                raise ValidationError("the unc channel needs --uncertainty")
            scene_io.save_plane(img.log_uncertainty, args.out + ".unc.imgf")
        else:
            raise ValidationError(f"unknown channel {ch!r}")
    _echo_config(args.out + ".config.json", "render", vars(args))
    print(f"rendered {','.join(channels)} to {args.out}.*")
    return 0


def _eval_views(field, uncertainty, gt_field, cams, samples):
    """Per-pixel depth errors, uncertainty scores and PSNR over cameras.

    Scores are the rendered log-uncertainty channel normalized by opacity,
    i.e. the mean log-sigma along each ray.
    """
    opts = renderer.RenderOptions(samples_per_ray=samples)
    errors, scores, psnrs = [], [], []
    for cam in cams:
        ref = renderer.render_channels(gt_field, cam, opts)
        pred = renderer.render_channels(field, cam, opts, uncertainty=uncertainty)
        mask = ref.opacity >= 0.5
        errors.append(evaluation.depth_error(pred.depth, ref.depth, mask)[mask])
        scores.append((pred.log_uncertainty / np.maximum(pred.opacity, 1e-10))[mask])
        psnrs.append(evaluation.psnr(np.clip(pred.rgb, 0, 1), np.clip(ref.rgb, 0, 1)))
    return np.concatenate(errors), np.concatenate(scores), float(np.mean(psnrs))


def cmd_eval(args):
    field = scene_io.load_field(args.field)
    uncertainty = scene_io.load_uncertainty(args.uncertainty)
    gt_field = scene_io.load_field(args.gt_field)
    bundle = scene_io.load_scene(args.scene, require_images=False)
    cams = [bundle.cameras[i] for i in (bundle.test_indices or bundle.train_indices)]
    errors, scores, psnr_clean = _eval_views(field, uncertainty, gt_field, cams, args.samples)
    sp = evaluation.sparsification(errors, scores)
    rho = evaluation.rank_correlation(errors, scores)

    cov = 1.0
    psnr_value = psnr_clean
    if args.threshold is not None:
        opts = renderer.RenderOptions(samples_per_ray=args.samples, threshold=args.threshold)
        ref_opts = renderer.RenderOptions(samples_per_ray=args.samples)
        pairs = [(renderer.render_channels(field, c, opts, uncertainty=uncertainty),
                  renderer.render_channels(gt_field, c, ref_opts)) for c in cams]
        cov = float(np.mean([evaluation.coverage(p) for p, _ in pairs]))
        psnr_value = float(np.mean([evaluation.psnr(np.clip(p.rgb, 0, 1), np.clip(r.rgb, 0, 1))
                                    for p, r in pairs]))

    metrics = {
        "ause": sp.ause,
        "psnr": psnr_value,
        "coverage": cov,
        "spearman": rho if rho is not None else "degenerate",
        "curve_fractions": sp.fractions,
        "curve_by_uncertainty": sp.by_score,
        "curve_by_error": sp.by_error,
    }
    text_path = os.path.splitext(args.report)[0] + ".txt"
    evaluation.write_report(metrics, args.report, text_path)
    _echo_config(args.report + ".config.json", "eval", vars(args))
    print(f"ause={sp.ause:.4f} psnr={psnr_value:.2f} coverage={cov:.3f} spearman={rho}")
    return 0


def cmd_sweep(args):
    field = scene_io.load_field(args.field)
    uncertainty = scene_io.load_uncertainty(args.uncertainty)
    gt_field = scene_io.load_field(args.gt_field)
    bundle = scene_io.load_scene(args.scene, require_images=False)
    cams = [bundle.cameras[i] for i in (bundle.test_indices or bundle.train_indices)]
    thresholds = (_csv_floats(args.thresholds) if args.thresholds
                  else np.linspace(0.1, 1.0, args.count).tolist())
    os.makedirs(args.out, exist_ok=True)
    ref_opts = renderer.RenderOptions(samples_per_ray=args.samples)
    refs = [renderer.render_channels(gt_field, c, ref_opts) for c in cams]
    base = [renderer.render_channels(field, c, ref_opts) for c in cams]
    base_psnr = float(np.mean([evaluation.psnr(np.clip(b.rgb, 0, 1), np.clip(r.rgb, 0, 1))
                               for b, r in zip(base, refs)]))
    rows = []
    for kappa in thresholds:
        opts = renderer.RenderOptions(samples_per_ray=args.samples, threshold=float(kappa))
        imgs = [renderer.render_channels(field, c, opts, uncertainty=uncertainty) for c in cams]
        score = float(np.mean([evaluation.psnr(np.clip(i.rgb, 0, 1), np.clip(r.rgb, 0, 1))
                               for i, r in zip(imgs, refs)]))
        cov = float(np.mean([evaluation.coverage(i) for i in imgs]))
        scene_io.save_png(imgs[0].rgb, os.path.join(args.out, f"threshold_{kappa:.3f}.png"))
        rows.append({"threshold": float(kappa), "psnr": score, "coverage": cov})
        print(f"threshold={kappa:.3f} psnr={score:.2f} coverage={cov:.3f}")
    doc = {"base_psnr": base_psnr, "rows": rows}
    scene_io._atomic_write_bytes(os.path.join(args.out, "sweep.json"),
                                 (json.dumps(doc, indent=2) + "\n").encode())
    _echo_config(os.path.join(args.out, "sweep.config.json"), "sweep", vars(args))
    print(f"base psnr={base_psnr:.2f}; wrote {args.out}/sweep.json")
    return 0


def cmd_serve(args):
    field = scene_io.load_field(args.field)
    uncertainty = scene_io.load_uncertainty(args.uncertainty)
    return server.serve_forever(field, uncertainty, args.port, samples_per_ray=args.samples)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="raylaplace",
                                description="voxel radiance fields with spatial uncertainty")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic scene: field, cameras, images")
    s.add_argument("--kind", default="sphere", choices=["box", "sphere", "two_blob", "floater"])
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--radius", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.add_argument("--cameras", type=int, default=16)
    s.add_argument("--camera-distance", type=float, default=1.6)
    s.add_argument("--elevations", default="0,12,-12")
    s.add_argument("--azimuth-start", type=float, default=0.0)
    s.add_argument("--azimuth-span", type=float, default=360.0)
    s.add_argument("--test-cameras", type=int, default=4)
    s.add_argument("--test-elevation", type=float, default=35.0)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--focal", type=float, default=80.0)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit a field to the scene's training images")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=int, default=32)
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--batch-rays", type=int, default=4096)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init-raw-density", type=float, default=-2.0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("uq", help="accumulate the information diagonal and write sigma")
    s.add_argument("--field", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid-resolution", type=int, default=64)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--batches", type=int, default=1000)
    s.add_argument("--rays-per-batch", type=int, default=4096)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_uq)

    s = sub.add_parser("render", help="render channels from a camera or pose")
    s.add_argument("--field", required=True)
    s.add_argument("--uncertainty")
    s.add_argument("--scene")
    s.add_argument("--camera-index", type=int, default=0)
    s.add_argument("--pose", help="12 comma-separated floats, row-major 3x4; "
                                  "use --pose=... when the first value is negative")
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--focal", type=float, default=300.0)
    s.add_argument("--channels", default="rgb,depth")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--samples", type=int, default=96)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="depth-error calibration and clean-up metrics")
    s.add_argument("--field", required=True)
    s.add_argument("--uncertainty", required=True)
    s.add_argument("--gt-field", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--samples", type=int, default=64)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="threshold sweep: one render + psnr/coverage per value")
    s.add_argument("--field", required=True)
    s.add_argument("--uncertainty", required=True)
    s.add_argument("--gt-field", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thresholds", help="comma-separated; overrides --count")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--samples", type=int, default=64)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("serve", help="interactive render service for the viewer")
    s.add_argument("--field", required=True)
    s.add_argument("--uncertainty", required=True)
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--samples", type=int, default=96)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RayLaplaceError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
