"""End-to-end orchestration: samples -> per-layer posteriors -> fused labels.

Stages communicate through plain data (and, from the CLI, through files on
disk): :func:`segment` produces per-layer posteriors plus everything the
fusion needs, :func:`fuse` turns those into labels, :func:`evaluate`
scores labels against references.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .constrained import DEFAULT_QUANTILE, categorize, sobel3d, solve_constrained
from .errors import InvalidInputError
from .hcrf import build_hcrf, fuse as hcrf_fuse
from .hyperopt import class_metrics, foreground_classes, hyperparameters_json, tune_hcrf, tune_layers
from .mesh import DEFAULT_RAY_RANGE, susceptibilities_from_mesh
from .phantom import generate_phantom
from .pyramid import SampleSet, build_pyramid, normalize_priors
from .sir import check_susceptibilities, solve_guided
from .solver import DEFAULT_TOL, assemble, solve
from .weights import SIGMA_FLOOR, TukeyParams, mad_sigma, reliability_from_entropy, spatial_edge_weights

log = logging.getLogger(__name__)

VARIANTS = ("fpg", "cfpg", "gfpg")
PRIOR_FLOOR = 1e-6


@dataclass
class RunConfig:
    variant: str = "fpg"
    n_lay: int = 1
    lambda_prior: float | list = 0.5
    lambda_hcrf: float = 0.5
    tune: bool = False
    solver: str = "auto"
    tol: float = DEFAULT_TOL
    sobel_quantile: float = DEFAULT_QUANTILE
    weighting: str = "tukey"
    mesh: str | None = None
    susceptibilities: list | None = None
    volume: str | None = None
    priors: str | None = None
    phantom: dict | None = None
    prior_blur: float = 1.0
    class_names: list | None = None
    background: int | None = None
    epat: str = "EpAT"
    pvat: str = "PvAT"
    ray_range: float = DEFAULT_RAY_RANGE
    seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(io.read_json(path))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def lambda_for(self, r: int) -> float:
        lam = self.lambda_prior
        if isinstance(lam, (list, tuple)):
            if len(lam) != self.n_lay + 1:
                raise InvalidInputError("lambda_prior list needs one value per layer")
            return float(lam[r])
        return float(lam)

    def validate(self, has_mesh: bool = False):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}")
        if self.n_lay < 0:
            raise InvalidInputError("n_lay must be nonnegative")
        if self.solver not in ("auto", "direct", "pcg", "iterative"):
            raise InvalidInputError(f"unknown solver {self.solver!r}")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if not 0 <= self.sobel_quantile <= 1:
            raise InvalidInputError("sobel_quantile must lie in [0, 1]")
        if self.lambda_hcrf < 0:
            raise InvalidInputError("lambda_hcrf must be nonnegative")
        for r in range(self.n_lay + 1):
            if not self.lambda_for(r) > 0:
                raise InvalidInputError("lambda_prior must be positive")
        if self.variant == "gfpg" and not (self.mesh or self.susceptibilities or has_mesh):
            raise InvalidInputError("gfpg needs a mesh or susceptibility volumes")
        if self.phantom is None and (self.volume is None or self.priors is None):
            raise InvalidInputError("give either a phantom spec or volume and priors paths")


@dataclass
class LayerResult:
    r: int
    posteriors: np.ndarray  # row-normalized
    scores: np.ndarray  # raw per-class solutions before normalization
    sigma: float
    weights: object
    categories: list | None = None
    susceptibilities: np.ndarray | None = None


@dataclass
class SegmentResult:
    pyramid: object
    samples: list
    layers: list
    class_names: list
    background: int
    guidance: object = None
    boundary_mask: np.ndarray | None = None

    @property
    def posteriors(self):
        return [lr.posteriors for lr in self.layers]

    @property
    def sigmas(self):
        return [lr.sigma for lr in self.layers]


def standardize(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    mu = f.mean(axis=0)
    sd = f.std(axis=0)
    return (f - mu) / np.where(sd > 0, sd, 1.0)


def build_samples(volume, prior_volume, pyramid, reference=None) -> list:
    """One :class:`SampleSet` per layer from voxel intensities and voxel priors."""
    v = np.asarray(volume, dtype=float)
    if v.ndim == 3:
        v = v[..., None]
    a = np.asarray(prior_volume, dtype=float)
    if a.shape[:3] != v.shape[:3]:
        raise InvalidInputError("prior volume and image volume differ in size")
    C = a.shape[3]
    a_pad = pyramid.pad(a, fill=1.0 / C)
    out = []
    for r in range(pyramid.n_lay + 1):
        f_hat = pyramid.aggregate_mean(v, r)
        pri = normalize_priors(pyramid.aggregate_mean(a_pad, r), PRIOR_FLOOR)
        h = reliability_from_entropy(pri[:, None, :])
        lab = None if reference is None else reference[r]
        out.append(SampleSet(r, standardize(f_hat), pri, h, f_hat, lab))
    return out


def _normalize_rows(scores, priors):
    s = np.clip(scores, 0.0, None)
    tot = s.sum(axis=1, keepdims=True)
    bad = tot[:, 0] <= 0
    if bad.any():
        log.info("%d samples have no positive class score; falling back to priors", int(bad.sum()))
    out = np.where(tot > 0, s / np.where(tot > 0, tot, 1.0), 0.0)
    out[bad] = priors[bad]
    return out


def segment_layer(samples: SampleSet, topology, variant: str, lambda_prior: float,
                  solver: str = "auto", tol: float = DEFAULT_TOL, boundary=None,
                  susceptibilities=None, weighting: str = "tukey") -> LayerResult:
    if topology.edges.shape[0]:
        sigma = mad_sigma(samples.features, topology)
    else:
        # an edgeless layer (e.g. a single top sample) has no smoothness term
        sigma = TukeyParams(SIGMA_FLOOR)
    weights = spatial_edge_weights(samples, topology, sigma=sigma if weighting == "tukey" else None,
                                   mode=weighting)
    a = samples.priors
    cats = None
    if variant == "fpg":
        scores, _ = solve(assemble(weights, a, lambda_prior), method=solver, tol=tol)
        posteriors = scores
    elif variant == "cfpg":
        if boundary is None:
            boundary = np.zeros(samples.n, dtype=bool)
        cats = [categorize(a, boundary, c) for c in range(samples.n_clas)]
        scores = np.column_stack([solve_constrained(weights, k, a, lambda_prior, method=solver, tol=tol)
                                  for k in cats])
        posteriors = _normalize_rows(scores, a)
    else:
        s = check_susceptibilities(susceptibilities, samples.n)
        method = "iterative" if solver == "pcg" else solver
        scores = solve_guided(weights, s, a, lambda_prior, method=method, tol=tol)
        posteriors = _normalize_rows(scores, a)
    return LayerResult(samples.r, posteriors, scores, sigma.sigma_out, weights, cats, susceptibilities)


def _class_index(names, name, fallback):
    return names.index(name) if name in names else fallback


def segment(cfg: RunConfig, volume, prior_volume, mesh=None, reference=None,
            susceptibilities=None, class_names=None, background=None) -> SegmentResult:
    pyramid = build_pyramid(np.asarray(volume).shape[:3], cfg.n_lay)
    samples = build_samples(volume, prior_volume, pyramid, reference)
    C = samples[0].n_clas
    names = list(class_names or cfg.class_names or [f"class{c}" for c in range(C)])
    if len(names) != C:
        raise InvalidInputError("class_names length differs from the prior channel count")
    bg = C - 1 if background is None else int(background)
    boundary = mask = None
    if cfg.variant == "cfpg":
        mask = sobel3d(volume, cfg.sobel_quantile).mask
        boundary = [pyramid.aggregate_any(mask, r) for r in range(cfg.n_lay + 1)]
    guidance = None
    if cfg.variant == "gfpg" and susceptibilities is None:
        if mesh is None:
            raise InvalidInputError("gfpg needs a mesh or susceptibilities")
        fat = pyramid.pad(np.asarray(volume, dtype=float)[..., 0] if np.ndim(volume) == 4 else volume)
        guidance = susceptibilities_from_mesh(
            mesh, fat, pyramid, C, _class_index(names, cfg.epat, 0), _class_index(names, cfg.pvat, min(2, C - 1)),
            cfg.ray_range)
        susceptibilities = guidance.susceptibilities
    layers = []
    for r, smp in enumerate(samples):
        layers.append(segment_layer(
            smp, pyramid.topology(r), cfg.variant, cfg.lambda_for(r), cfg.solver, cfg.tol,
            None if boundary is None else boundary[r],
            None if susceptibilities is None else susceptibilities[r], cfg.weighting))
        log.info("layer %d: %d samples segmented (%s)", r, smp.n, cfg.variant)
    return SegmentResult(pyramid, samples, layers, names, bg, guidance, mask)


def fuse(pyramid, posteriors, features_ind, reliability, sigmas, lambda_hcrf: float):
    graph = build_hcrf(pyramid, posteriors, features_ind, reliability, sigmas, lambda_hcrf)
    return hcrf_fuse(graph)


def fuse_segment(seg: SegmentResult, lambda_hcrf: float):
    return fuse(seg.pyramid, seg.posteriors, [s.features_ind for s in seg.samples],
                [s.reliability for s in seg.samples], seg.sigmas, lambda_hcrf)


def evaluate(labels, references, n_clas: int, background: int) -> dict:
    """Per-layer and pooled one-vs-rest metrics over the foreground classes."""
    classes = foreground_classes(n_clas, background)
    per_layer = []
    for r, (lab, ref) in enumerate(zip(labels, references)):
        p, q = class_metrics(lab, ref, classes)
        per_layer.append({"layer": r, "precision": p, "recall": q,
                          "avg_precision": float(np.mean(p)), "avg_recall": float(np.mean(q))})
    lab = np.concatenate([np.ravel(x) for x in labels])
    ref = np.concatenate([np.ravel(x) for x in references])
    p, q = class_metrics(lab, ref, classes)
    return {"classes": classes, "layers": per_layer, "precision": p, "recall": q,
            "avg_precision": float(np.mean(p)), "avg_recall": float(np.mean(q))}


@dataclass
class PipelineResult:
    config: RunConfig
    segment: SegmentResult
    labels: list
    energy: object
    metrics: dict | None = None
    reference: list | None = None
    tuned: dict = field(default_factory=dict)


def load_inputs(cfg: RunConfig):
    """Volume, voxel priors, mesh, references and class info for a config."""
    if cfg.phantom is not None:
        spec = dict(cfg.phantom)
        spec.setdefault("seed", cfg.seed)
        ph = generate_phantom(**spec)
        mesh = ph.mesh
        if cfg.mesh:
            mesh = io.read_obj(cfg.mesh)
        pyr = build_pyramid(ph.dims, cfg.n_lay)
        return (ph.volume, ph.prior_volume(cfg.prior_blur), mesh, ph.layer_labels(pyr),
                ph.class_names, ph.background)
    if cfg.volume is None or cfg.priors is None:
        raise InvalidInputError("give either a phantom spec or volume and priors paths")
    volume, _ = io.read_volume(cfg.volume)
    priors, _ = io.read_volume(cfg.priors)
    if priors.ndim == 3:
        raise InvalidInputError("prior volume needs one channel per class")
    mesh = io.read_obj(cfg.mesh) if cfg.mesh else None
    return volume, priors, mesh, None, cfg.class_names, cfg.background


def _load_susceptibilities(cfg, pyramid):
    if not cfg.susceptibilities:
        return None
    out = []
    for r, path in enumerate(cfg.susceptibilities):
        vol, _ = io.read_volume(path)
        out.append(pyramid.from_volume(vol, r).reshape(pyramid.n_samples(r), -1))
    return out


def run_pipeline(cfg: RunConfig, write: bool = True) -> PipelineResult:
    """Segment, optionally tune, fuse, evaluate; write artifacts to ``cfg.out``."""
    volume, prior_vol, mesh, reference, names, bg = load_inputs(cfg)
    cfg.validate(has_mesh=mesh is not None)
    pyramid = build_pyramid(np.asarray(volume).shape[:3], cfg.n_lay)
    sus = _load_susceptibilities(cfg, pyramid)
    tuned = {}
    if cfg.tune:
        if reference is None:
            raise InvalidInputError("tuning needs reference labels (use a phantom)")
        tuned = tune(cfg, volume, prior_vol, mesh, reference, names, bg, sus)
        cfg = dataclasses.replace(cfg, lambda_prior=[tuned["lambda_prior"][r] for r in range(cfg.n_lay + 1)],
                                  lambda_hcrf=tuned["lambda_hcrf"])
    seg = segment(cfg, volume, prior_vol, mesh, reference, sus, names, bg)
    labels, energy = fuse_segment(seg, cfg.lambda_hcrf)
    metrics = None
    if reference is not None:
        metrics = evaluate(labels, reference, len(seg.class_names), seg.background)
    result = PipelineResult(cfg, seg, labels, energy, metrics, reference, tuned)
    if write and cfg.out:
        write_segment(cfg.out, seg, cfg)
        write_labels(cfg.out, seg.pyramid, labels, energy, cfg)
        if reference is not None:
            write_references(cfg.out, seg.pyramid, reference)
            io.write_json(Path(cfg.out) / "metrics.json", metrics)
        if tuned:
            io.write_json(Path(cfg.out) / "hyperparameters.json", json.loads(tuned["json"]))
            (Path(cfg.out) / "trials.jsonl").write_text("\n".join(tuned["log"]) + "\n")
    return result


def tune(cfg, volume, prior_vol, mesh, reference, names, bg, sus=None) -> dict:
    """Coarse-to-fine prior strengths, then the HCRF coupling."""
    base = segment(dataclasses.replace(cfg, lambda_prior=1.0), volume, prior_vol, mesh, reference, sus, names, bg)
    guidance_s = sus if sus is not None else (base.guidance.susceptibilities if base.guidance else None)
    C = len(base.class_names)
    boundary = None
    if cfg.variant == "cfpg":
        mask = sobel3d(volume, cfg.sobel_quantile).mask
        boundary = [base.pyramid.aggregate_any(mask, r) for r in range(cfg.n_lay + 1)]

    def seg_layer(r, lam, frozen):
        lr = segment_layer(base.samples[r], base.pyramid.topology(r), cfg.variant, lam, cfg.solver, cfg.tol,
                           None if boundary is None else boundary[r],
                           None if guidance_s is None else guidance_s[r], cfg.weighting)
        return np.argmax(lr.posteriors, axis=1)

    lam_prior, res = tune_layers(seg_layer, reference, C, seed=cfg.seed, background=base.background)
    post = [segment_layer(base.samples[r], base.pyramid.topology(r), cfg.variant, lam_prior[r], cfg.solver,
                          cfg.tol, None if boundary is None else boundary[r],
                          None if guidance_s is None else guidance_s[r], cfg.weighting) for r in range(cfg.n_lay + 1)]
    feats = [s.features_ind for s in base.samples]
    rel = [s.reliability for s in base.samples]
    sig = [lr.sigma for lr in post]
    post_p = [lr.posteriors for lr in post]
    hres = tune_hcrf(lambda v: fuse(base.pyramid, post_p, feats, rel, sig, v)[0], reference, C,
                     seed=cfg.seed, background=base.background)
    lines = [ln for r in sorted(res, reverse=True) for ln in res[r].log_lines()] + hres.log_lines()
    return {"lambda_prior": lam_prior, "lambda_hcrf": hres.best, "log": lines,
            "json": hyperparameters_json(lam_prior, hres.best, cfg.variant)}


# ---- disk artifacts -------------------------------------------------------

def write_segment(out, seg: SegmentResult, cfg: RunConfig):
    out = Path(out)
    pyr = seg.pyramid
    for r, (smp, lr) in enumerate(zip(seg.samples, seg.layers)):
        io.write_volume(out / f"posteriors_r{r}", pyr.to_volume(lr.posteriors, r))
        io.write_volume(out / f"features_ind_r{r}", pyr.to_volume(smp.features_ind, r))
        io.write_volume(out / f"reliability_r{r}", pyr.to_volume(smp.reliability, r))
        if lr.categories is not None:
            io.write_json(out / f"categories_r{r}.json", [k.summary() for k in lr.categories])
        if lr.susceptibilities is not None:
            io.write_volume(out / f"susceptibilities_r{r}", pyr.to_volume(lr.susceptibilities, r))
    if seg.boundary_mask is not None:
        io.write_volume(out / "boundary_mask", seg.boundary_mask.astype(np.uint8), dtype="uint8")
    if seg.guidance is not None:
        (out / "curvature_histogram.csv").write_text(seg.guidance.populations.to_csv())
    manifest = {
        "dims_input": list(pyr.dims_input), "n_lay": pyr.n_lay, "class_names": seg.class_names,
        "background": seg.background, "sigmas": [float(s) for s in seg.sigmas], "variant": cfg.variant,
        "lambda_prior": [cfg.lambda_for(r) for r in range(pyr.n_lay + 1)],
        "config": cfg.to_dict(),
    }
    io.write_json(out / "segment.json", manifest)


def read_segment(out):
    out = Path(out)
    man = io.read_json(out / "segment.json")
    pyr = build_pyramid(man["dims_input"], man["n_lay"])
    post, feats, rel = [], [], []
    for r in range(pyr.n_lay + 1):
        p, _ = io.read_volume(out / f"posteriors_r{r}")
        f, _ = io.read_volume(out / f"features_ind_r{r}")
        h, _ = io.read_volume(out / f"reliability_r{r}")
        n = pyr.n_samples(r)
        post.append(pyr.from_volume(p, r).reshape(n, -1).astype(float))
        feats.append(pyr.from_volume(f, r).reshape(n, -1).astype(float))
        rel.append(pyr.from_volume(h, r).reshape(n).astype(float))
    return man, pyr, post, feats, rel


def fuse_from_disk(out, lambda_hcrf: float):
    man, pyr, post, feats, rel = read_segment(out)
    labels, energy = fuse(pyr, post, feats, rel, man["sigmas"], lambda_hcrf)
    write_labels(out, pyr, labels, energy, None, lambda_hcrf)
    return labels, energy


def write_labels(out, pyramid, labels, energy, cfg=None, lambda_hcrf=None):
    out = Path(out)
    for r, lab in enumerate(labels):
        io.write_volume(out / f"labels_r{r}", pyramid.to_volume(np.asarray(lab), r), dtype="uint16")
    rep = energy.to_dict()
    rep["lambda_hcrf"] = float(cfg.lambda_hcrf if cfg is not None else lambda_hcrf)
    io.write_json(out / "energy.json", rep)
    if cfg is not None:
        io.write_json(out / "config.json", cfg.to_dict())


def write_references(out, pyramid, reference):
    for r, lab in enumerate(reference):
        io.write_volume(Path(out) / f"reference_r{r}", pyramid.to_volume(np.asarray(lab), r), dtype="uint16")


def read_layer_labels(out, prefix: str, n_lay: int, pyramid):
    labels = []
    for r in range(n_lay + 1):
        v, _ = io.read_volume(Path(out) / f"{prefix}_r{r}")
        labels.append(pyramid.from_volume(v, r).astype(np.int64))
    return labels


def evaluate_from_disk(out, reference_dir=None):
    out = Path(out)
    man = io.read_json(out / "segment.json")
    pyr = build_pyramid(man["dims_input"], man["n_lay"])
    labels = read_layer_labels(out, "labels", pyr.n_lay, pyr)
    reference = read_layer_labels(reference_dir or out, "reference", pyr.n_lay, pyr)
    metrics = evaluate(labels, reference, len(man["class_names"]), man["background"])
    io.write_json(out / "metrics.json", metrics)
    return metrics
