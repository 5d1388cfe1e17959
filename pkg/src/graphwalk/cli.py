"""Command-line driver.

Subcommands::

    graphwalk phantom  --out DIR [--kind K --dims X Y Z --noise S]
    graphwalk segment  --config CFG.json --out DIR [--variant V ...]
    graphwalk fuse     --out DIR [--lambda-hcrf L]
    graphwalk tune     --config CFG.json --out DIR
    graphwalk eval     --out DIR [--reference DIR]

Failures print one JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import GraphwalkError
from .phantom import KINDS, generate_phantom
from .pipeline import (
    RunConfig,
    evaluate_from_disk,
    fuse_from_disk,
    run_pipeline,
    segment,
    write_references,
    write_segment,
)
from .pyramid import build_pyramid

log = logging.getLogger("graphwalk")

EXIT_USER, EXIT_IO, EXIT_INTERNAL = 2, 3, 4


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--variant", choices=["fpg", "cfpg", "gfpg"])
        p.add_argument("--tol", type=float)
        p.add_argument("--sobel-quantile", type=float)
        p.add_argument("--mesh", help="OBJ surface mesh for gfpg")
        p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-level", default="WARNING")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphwalk", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a synthetic volume, priors and references")
    p.add_argument("--kind", choices=KINDS, default="nested-shells")
    p.add_argument("--dims", type=int, nargs=3, default=[12, 12, 12])
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--weak-boundary", action="store_true")
    p.add_argument("--prior-blur", type=float, default=1.0)
    p.add_argument("--n-lay", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _common(p, config=False)

    p = sub.add_parser("segment", help="per-layer posteriors")
    _common(p)
    p = sub.add_parser("fuse", help="HCRF fusion of segment outputs")
    p.add_argument("--lambda-hcrf", type=float)
    _common(p, config=False)
    p = sub.add_parser("tune", help="random-search hyperparameters, then run")
    _common(p)
    p = sub.add_parser("eval", help="precision / recall of fused labels")
    p.add_argument("--reference", help="directory holding reference_r*.raw (defaults to --out)")
    _common(p, config=False)
    return ap


def load_config(args) -> RunConfig:
    data = io.read_json(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig.from_dict(data)
    over = {
        "variant": args.variant, "tol": args.tol, "sobel_quantile": args.sobel_quantile,
        "mesh": args.mesh, "seed": args.seed, "out": args.out,
    }
    cfg = dataclasses.replace(cfg, **{k: v for k, v in over.items() if v is not None})
    if cfg.volume is None and cfg.phantom is None and Path(args.out, "volume.json").exists():
        # default to the inputs a previous `phantom` call left in the output directory
        cfg = dataclasses.replace(cfg, volume=str(Path(args.out, "volume")),
                                  priors=str(Path(args.out, "priors")))
        manifest = Path(args.out, "phantom.json")
        if manifest.exists():
            info = io.read_json(manifest)
            if cfg.class_names is None:
                cfg = dataclasses.replace(cfg, class_names=info["class_names"], background=info["background"])
            if cfg.mesh is None and Path(args.out, "mesh.obj").exists():
                cfg = dataclasses.replace(cfg, mesh=str(Path(args.out, "mesh.obj")))
    return cfg


def cmd_phantom(args):
    ph = generate_phantom(args.kind, args.dims, args.noise, args.seed, args.weak_boundary)
    out = Path(args.out)
    io.write_volume(out / "volume", ph.volume)
    io.write_volume(out / "priors", ph.prior_volume(args.prior_blur))
    io.write_volume(out / "labels", ph.labels, dtype="uint16")
    pyr = build_pyramid(ph.dims, args.n_lay)
    write_references(out, pyr, ph.layer_labels(pyr))
    if ph.mesh is not None:
        io.write_obj(out / "mesh.obj", ph.mesh)
    io.write_json(out / "phantom.json", {"kind": ph.kind, "dims": list(ph.dims), "class_names": ph.class_names,
                                         "background": ph.background, "n_lay": args.n_lay, "params": ph.params})
    return {"written": str(out)}


def cmd_segment(args):
    cfg = load_config(args)
    from .pipeline import load_inputs, _load_susceptibilities

    volume, priors, mesh, reference, names, bg = load_inputs(cfg)
    cfg.validate(has_mesh=mesh is not None)
    pyr = build_pyramid(volume.shape[:3], cfg.n_lay)
    seg = segment(cfg, volume, priors, mesh, reference, _load_susceptibilities(cfg, pyr), names, bg)
    write_segment(cfg.out, seg, cfg)
    if reference is not None:
        write_references(cfg.out, pyr, reference)
    io.write_json(Path(cfg.out) / "config.json", cfg.to_dict())
    return {"layers": len(seg.layers), "sigmas": seg.sigmas}


def cmd_fuse(args):
    lam = args.lambda_hcrf
    if lam is None:
        man = io.read_json(Path(args.out) / "segment.json")
        lam = man["config"].get("lambda_hcrf", 0.5)
    _, energy = fuse_from_disk(args.out, lam)
    return energy.to_dict()


def cmd_tune(args):
    cfg = dataclasses.replace(load_config(args), tune=True)
    res = run_pipeline(cfg)
    return {"lambda_prior": res.tuned["lambda_prior"], "lambda_hcrf": res.tuned["lambda_hcrf"],
            "metrics": {"avg_precision": res.metrics["avg_precision"], "avg_recall": res.metrics["avg_recall"]}}


def cmd_eval(args):
    m = evaluate_from_disk(args.out, args.reference)
    return {"avg_precision": m["avg_precision"], "avg_recall": m["avg_recall"]}


COMMANDS = {"phantom": cmd_phantom, "segment": cmd_segment, "fuse": cmd_fuse,
            "tune": cmd_tune, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        summary = COMMANDS[args.command](args)
    except GraphwalkError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(json.dumps({"error": "io-error", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort structured report
        log.debug("unhandled error", exc_info=True)
        print(json.dumps({"error": "internal", "type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(summary, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
