"""Classification and separation of two overlaid handwritten digits.

Each digit class ``j`` is represented by ``U[j]``, the first ``k`` left
singular vectors of its 256 x 998 training matrix (no mean-centering). A
composite ``beta = beta_1 + beta_2`` is observed through a Bernoulli sensing
matrix; the pipeline

1. solves the Dantzig problem against ``B = [U[0] ... U[9]]``,
2. scores every class by ``||(I - U[j] U[j]^T) beta_hat||_2``,
3. keeps the two best classes and re-solves against ``[U[j1] U[j2]]``,
4. returns the two separated components.

Input format: a CSV file with one image per row, ``label,v1,...,v256``,
labels ``0..9`` and 1100 rows per class. Within a class, the first 998 rows
(in file order) are training examples and the last 102 are test examples.
Pixel values are used as read; the public USPS release stores 16x16
grayscale images which only need flattening row by row.
"""

import csv
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dictionary import build_learned, concat
from .errors import CountError, DegenerateScores, FormatError, RankError
from .sensing import Purpose, bernoulli_sensing, derive_seed, rng_for
from .solver import SolverConfig, assemble, scaled_alpha, solve

__all__ = [
    "N_CLASSES",
    "N_PIXELS",
    "N_TRAIN",
    "N_TEST",
    "DigitDataset",
    "PcaBlock",
    "SeparationResult",
    "DigitTrial",
    "DigitSummary",
    "DigitSolverSettings",
    "load_usps",
    "synthetic_dataset",
    "pca_block",
    "residual_score",
    "classify",
    "classify_and_separate",
    "run_digit_experiment",
    "write_digit_trials_csv",
    "write_pgm",
]

N_CLASSES = 10
N_PIXELS = 256
N_TRAIN = 998
N_TEST = 102


@dataclass(frozen=True, eq=False)
class DigitDataset:
    train: tuple  # per class, N_PIXELS x N_TRAIN
    test: tuple  # per class, N_TEST x N_PIXELS (one test vector per row)


@dataclass(frozen=True, eq=False)
class PcaBlock:
    label: int
    U: np.ndarray

    @property
    def k(self):
        return self.U.shape[1]


@dataclass(frozen=True, eq=False)
class SeparationResult:
    labels: tuple
    components: tuple
    beta_hat: np.ndarray
    scores: np.ndarray
    reduced_coeffs: np.ndarray = None


def load_usps(path):
    """Read and validate a digit CSV file.

    Raises
    ------
    FormatError
        On a malformed row; the message names the 1-based row number.
    CountError
        If any class does not hold exactly 1100 images.
    """
    per_class = [[] for _ in range(N_CLASSES)]
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != N_PIXELS + 1:
                raise FormatError(
                    f"expected {N_PIXELS + 1} fields, found {len(row)}", row=row_no)
            try:
                label = int(row[0])
                pixels = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(str(exc), row=row_no) from None
            if not 0 <= label < N_CLASSES:
                raise FormatError(f"label {label} outside 0..9", row=row_no)
            if not np.all(np.isfinite(pixels)):
                raise FormatError("non-finite pixel value", row=row_no)
            per_class[label].append(pixels)
    counts = [len(c) for c in per_class]
    expected = N_TRAIN + N_TEST
    if any(c != expected for c in counts):
        raise CountError(f"every class needs {expected} images, found {counts}")
    train = tuple(np.array(c[:N_TRAIN]).T for c in per_class)
    test = tuple(np.array(c[N_TRAIN:]) for c in per_class)
    return DigitDataset(train, test)


def synthetic_dataset(seed, k=30, decay=0.9, noise=0.0):
    """Ten classes drawn from random ``k``-dimensional subspaces of R^256.

    Coefficients along the ``i``-th basis vector have standard deviation
    ``decay**i`` so the class spectra fall off like real image data. With
    ``noise == 0`` every example lies exactly in its class subspace.
    """
    rng = rng_for(seed, Purpose.SIGNAL)
    scales = decay ** np.arange(k)
    train, test = [], []
    for _ in range(N_CLASSES):
        basis, _ = np.linalg.qr(rng.standard_normal((N_PIXELS, k)))
        coeffs = rng.standard_normal((k, N_TRAIN + N_TEST)) * scales[:, None]
        data = basis @ coeffs
        if noise:
            data += noise * rng.standard_normal(data.shape)
        train.append(data[:, :N_TRAIN])
        test.append(data[:, N_TRAIN:].T.copy())
    return DigitDataset(tuple(train), tuple(test))


def pca_block(R, k, label=0):
    """First `k` left singular vectors of the training matrix `R`.

    Raises
    ------
    RankError
        If `R` has numerical rank below `k`.
    """
    R = np.asarray(R, dtype=float)
    if not 1 <= k <= R.shape[0]:
        raise ValueError(f"k must lie in [1, {R.shape[0]}], got {k}")
    U, svals, _ = np.linalg.svd(R, full_matrices=False)
    rank = int(np.sum(svals > svals[0] * max(R.shape) * np.finfo(float).eps)) if svals.size else 0
    if rank < k:
        raise RankError(f"training matrix has rank {rank} < k={k}")
    return PcaBlock(int(label), np.ascontiguousarray(U[:, :k]))


def residual_score(beta_hat, block):
    """``||beta_hat - U U^H beta_hat||_2``: distance from the class subspace."""
    beta_hat = np.asarray(beta_hat)
    U = block.U
    return float(np.linalg.norm(beta_hat - U @ (U.conj().T @ beta_hat)))


def classify(beta_hat, blocks):
    """Return ``(labels, scores)`` for the two best-scoring classes.

    Ties go to the lower label. Raises :class:`DegenerateScores` when fewer
    than two scores are finite, or when three or more classes explain
    `beta_hat` to within ``1e-12`` relative, which leaves the pair undetermined.
    """
    scores = np.array([residual_score(beta_hat, b) for b in blocks])
    labels = np.array([b.label for b in blocks])
    finite = np.isfinite(scores)
    if finite.sum() < 2:
        raise DegenerateScores("fewer than two finite class scores")
    order = np.lexsort((labels, np.where(finite, scores, np.inf)))
    floor = 1e-12 * max(float(np.linalg.norm(beta_hat)), 1.0)
    if finite.sum() > 2 and scores[order[2]] <= floor:
        raise DegenerateScores("three or more classes fit the signal exactly")
    return (int(labels[order[0]]), int(labels[order[1]])), scores


@dataclass(frozen=True)
class DigitSolverSettings:
    """Solver settings for the noiseless digit solves.

    ``delta`` defaults to ``delta_scale * ||gamma||_inf`` and ``alpha`` to
    ``alpha_scale * ||A|| / ||gamma||_inf``.
    """

    epsilon: float = 1e-4
    eta: int = 50
    max_iter: int = 5000
    delta: Optional[float] = None
    delta_scale: float = 1e-3
    alpha: Optional[float] = None
    alpha_scale: float = 1.0


def _dantzig(X, B, y, settings):
    delta = settings.delta
    if delta is None:
        # gamma only depends on (X, B, y); assemble once to read it off.
        _, probe = assemble(X, B, y, 0.0)
        delta = settings.delta_scale * float(np.max(np.abs(probe.gamma)))
    problem, pre = assemble(X, B, y, delta)
    alpha = settings.alpha
    if alpha is None:
        alpha = scaled_alpha(pre, settings.alpha_scale)
    cfg = SolverConfig(alpha=alpha, epsilon=settings.epsilon, eta=settings.eta,
                       max_iter=settings.max_iter)
    return solve(problem, pre, cfg)


def classify_and_separate(y, X, blocks, settings=DigitSolverSettings()):
    """Identify and separate the two digits behind the observation `y`."""
    X = np.asarray(X)
    B = concat(build_learned(b.U) for b in blocks)
    sol = _dantzig(X, B, y, settings)
    beta_hat = B.apply(sol.c_hat)
    (j1, j2), scores = classify(beta_hat, blocks)
    by_label = {b.label: b for b in blocks}
    reduced = concat([build_learned(by_label[j1].U), build_learned(by_label[j2].U)])
    sol2 = _dantzig(X, reduced, y, settings)
    comp1, comp2 = reduced.components(sol2.c_hat)
    return SeparationResult((j1, j2), (comp1, comp2), beta_hat, scores, sol2.c_hat)


@dataclass
class DigitTrial:
    trial: int
    true_labels: tuple
    labels_hat: tuple
    labels_exact: tuple
    correct_hat: int
    correct_exact: int
    scores: np.ndarray

    @property
    def pair_identified(self):
        return self.correct_hat == 2

    @property
    def match_or_exceed(self):
        return self.correct_hat >= self.correct_exact


@dataclass
class DigitSummary:
    trials: list

    @property
    def count(self):
        return len(self.trials)

    @property
    def pair_accuracy(self):
        return float(np.mean([t.pair_identified for t in self.trials])) if self.trials else float("nan")

    @property
    def match_or_exceed_rate(self):
        return float(np.mean([t.match_or_exceed for t in self.trials])) if self.trials else float("nan")

    @property
    def exact_pair_accuracy(self):
        return float(np.mean([t.correct_exact == 2 for t in self.trials])) if self.trials else float("nan")


def _correct(pred, truth):
    return len(set(pred) & set(truth))


def run_digit_experiment(dataset, trials, k=30, seed=0, settings=DigitSolverSettings(),
                         n=128, dump_dir=None, dump_trials=None):
    """Repeat the composite-digit pipeline `trials` times.

    Each trial draws two distinct classes, one test image from each, and a
    fresh ``n x 256`` Bernoulli sensing matrix; ``y = X beta`` is noiseless.
    When `dump_dir` is given, PGM images of the exact and recovered signals
    are written for trial indices in `dump_trials` (default: all).
    """
    blocks = [pca_block(R, k, label=j) for j, R in enumerate(dataset.train)]
    records = []
    for t in range(trials):
        rng = rng_for(seed, Purpose.SELECTION, t)
        j1, j2 = (int(v) for v in rng.choice(N_CLASSES, size=2, replace=False))
        b1 = dataset.test[j1][rng.integers(len(dataset.test[j1]))]
        b2 = dataset.test[j2][rng.integers(len(dataset.test[j2]))]
        beta = b1 + b2
        X = bernoulli_sensing(n, N_PIXELS, derive_seed(seed, Purpose.MATRIX, t))
        y = X.entries @ beta
        result = classify_and_separate(y, X, blocks, settings)
        exact_labels, _ = classify(beta, blocks)
        truth = (j1, j2)
        records.append(DigitTrial(
            trial=t,
            true_labels=truth,
            labels_hat=result.labels,
            labels_exact=exact_labels,
            correct_hat=_correct(result.labels, truth),
            correct_exact=_correct(exact_labels, truth),
            scores=result.scores,
        ))
        if dump_dir is not None and (dump_trials is None or t in dump_trials):
            _dump_trial(dump_dir, t, beta, b1, b2, result)
    return DigitSummary(records)


def write_digit_trials_csv(path, summary, header=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerows(header)
        w.writerow(["trial", "true_j1", "true_j2", "hat_j1", "hat_j2", "exact_j1", "exact_j2",
                    "correct_hat", "correct_exact", "match_or_exceed"]
                   + [f"score_{j}" for j in range(N_CLASSES)])
        for r in summary.trials:
            w.writerow([r.trial, *r.true_labels, *r.labels_hat, *r.labels_exact,
                        r.correct_hat, r.correct_exact, int(r.match_or_exceed)]
                       + [f"{s:.16e}" for s in r.scores])


def write_pgm(path, vector, side=16):
    """Write a vector as an 8-bit binary PGM, linearly rescaled to 0..255."""
    img = np.real(np.asarray(vector)).reshape(side, side)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo) * 255.0
    with open(path, "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(np.round(scaled).astype(np.uint8).tobytes())


def _dump_trial(directory, t, beta, b1, b2, result):
    os.makedirs(directory, exist_ok=True)
    images = {
        "beta": beta, "beta1": b1, "beta2": b2, "beta_hat": result.beta_hat,
        "beta_hat_j1": result.components[0], "beta_hat_j2": result.components[1],
    }
    for name, vec in images.items():
        write_pgm(os.path.join(directory, f"trial{t:04d}_{name}.pgm"), vec)
