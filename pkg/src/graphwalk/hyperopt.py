"""Random-search tuning of the prior and HCRF coupling strengths.

Values are drawn from the grid in shuffled sweeps: every sweep visits each
grid value once in random order, so any ``stop_window >= len(grid)``
consecutive trials cover the whole grid.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .weights import LAMBDA_GRID

log = logging.getLogger(__name__)

STOP_WINDOW = 20


def precision_recall(labels, reference, c: int):
    """One-vs-rest precision and recall of class ``c``.

    Precision is 1 when nothing is predicted as ``c``; recall is 1 when
    ``c`` is absent from the reference.
    """
    labels = np.asarray(labels).ravel()
    reference = np.asarray(reference).ravel()
    if labels.shape != reference.shape:
        raise InvalidInputError("labels and reference differ in size")
    pred, true = labels == c, reference == c
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def class_metrics(labels, reference, classes):
    pr = [precision_recall(labels, reference, c) for c in classes]
    return [p for p, _ in pr], [r for _, r in pr]


def foreground_classes(n_clas: int, background: int | None = None):
    if background is None:
        background = n_clas - 1
    return [c for c in range(n_clas) if c != background]


@dataclass
class TrialRecord:
    value: float
    precision: list
    recall: list
    wall_time: float = 0.0
    improved: bool = False

    @property
    def avg_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def avg_recall(self) -> float:
        return float(np.mean(self.recall))

    def to_dict(self, include_wall_time: bool = False) -> dict:
        d = {
            "value": self.value,
            "precision": list(map(float, self.precision)),
            "recall": list(map(float, self.recall)),
            "avg_precision": self.avg_precision,
            "avg_recall": self.avg_recall,
            "improved": self.improved,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class SearchResult:
    best: float
    trials: list = field(default_factory=list)
    name: str = "lambda"

    @property
    def n_improvements(self) -> int:
        return sum(t.improved for t in self.trials[1:])

    def log_lines(self, include_wall_time: bool = False) -> list:
        return [
            json.dumps({"param": self.name, "trial": i, **t.to_dict(include_wall_time)}, sort_keys=True)
            for i, t in enumerate(self.trials)
        ]


def _draws(grid, rng):
    while True:
        for i in rng.permutation(len(grid)):
            yield grid[i]


def random_search(evaluate, grid=LAMBDA_GRID, stop_window: int = STOP_WINDOW, seed=0,
                  name: str = "lambda", max_trials: int = 10_000) -> SearchResult:
    """Trial grid values until ``stop_window`` consecutive trials fail to improve.

    ``evaluate(value)`` returns ``(precisions, recalls)`` per foreground
    class. A trial improves when its averaged precision and its averaged
    recall both strictly exceed every trial of the preceding window. The
    selected value is the trial with the largest precision + recall sum,
    earliest on ties.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidInputError("empty grid")
    rng = np.random.default_rng(seed)
    trials: list[TrialRecord] = []
    misses = 0
    for value in _draws(grid, rng):
        t0 = time.perf_counter()
        prec, rec = evaluate(value)
        rec_ = TrialRecord(value, list(prec), list(rec), time.perf_counter() - t0)
        window = trials[-stop_window:]
        if window:
            rec_.improved = (rec_.avg_precision > max(t.avg_precision for t in window)
                             and rec_.avg_recall > max(t.avg_recall for t in window))
            misses = 0 if rec_.improved else misses + 1
        else:
            rec_.improved = True
        trials.append(rec_)
        log.debug("%s trial %d: %g -> P=%.4f R=%.4f", name, len(trials), value,
                  rec_.avg_precision, rec_.avg_recall)
        if misses >= stop_window or len(trials) >= max_trials:
            break
    score = [t.avg_precision + t.avg_recall for t in trials]
    best = trials[int(np.argmax(score))].value
    return SearchResult(best, trials, name)


def tune_layer(segment, reference, n_clas: int, grid=LAMBDA_GRID, stop_window: int = STOP_WINDOW,
               seed=0, background: int | None = None, name: str = "lambda_prior") -> SearchResult:
    """Tune one layer's prior strength.

    ``segment(lambda_prior)`` returns the layer's labels for the validation
    samples; ``reference`` holds the true labels.
    """
    reference = np.asarray(reference)
    if reference.size == 0:
        raise InvalidInputError("empty validation set")
    classes = foreground_classes(n_clas, background)
    return random_search(lambda v: class_metrics(segment(v), reference, classes), grid,
                         stop_window, seed, name)


def tune_layers(segment_layer, references, n_clas: int, grid=LAMBDA_GRID,
                stop_window: int = STOP_WINDOW, seed=0, background: int | None = None):
    """Coarse-to-fine tuning; each layer is frozen before the next finer one.

    ``segment_layer(r, lambda_prior, frozen)`` gets the already tuned values
    of the coarser layers in ``frozen`` (dict ``r -> lambda``).
    """
    n_lay = len(references) - 1
    seeds = np.random.SeedSequence(seed).spawn(n_lay + 1)
    frozen, results = {}, {}
    for r in range(n_lay, -1, -1):
        res = tune_layer(lambda v, r=r: segment_layer(r, v, dict(frozen)), references[r], n_clas,
                         grid, stop_window, seeds[r], background, name=f"lambda_prior[{r}]")
        frozen[r] = res.best
        results[r] = res
    return frozen, results


def tune_hcrf(fuse, references, n_clas: int, grid=LAMBDA_GRID, stop_window: int = STOP_WINDOW,
              seed=0, background: int | None = None) -> SearchResult:
    """Tune the HCRF coupling on labels of all layers together.

    ``fuse(lambda_hcrf)`` returns a list of per-layer label arrays.
    """
    ref = np.concatenate([np.asarray(x).ravel() for x in references])
    if ref.size == 0:
        raise InvalidInputError("empty validation set")
    classes = foreground_classes(n_clas, background)

    def evaluate(v):
        lab = np.concatenate([np.asarray(x).ravel() for x in fuse(v)])
        return class_metrics(lab, ref, classes)

    return random_search(evaluate, grid, stop_window, seed, "lambda_hcrf")


def hyperparameters_json(lambda_prior: dict, lambda_hcrf: float, variant: str) -> str:
    """Final values, one column per layer plus the HCRF coupling."""
    row = {"variant": variant}
    row.update({f"lambda_prior_r{r}": float(v) for r, v in sorted(lambda_prior.items())})
    row["lambda_hcrf"] = float(lambda_hcrf)
    return json.dumps(row, sort_keys=True)
