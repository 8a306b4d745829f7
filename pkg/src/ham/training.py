"""AdaGrad, the epoch loop with dev-set model selection, evaluation and
finite-difference gradient checking."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .answer import grade, select
from .encoder import build_vocabulary, load_vectors
from .errors import ConfigError, EmptyDatasetError, NonFiniteError, TrainingDiverged
from .model import HamModel, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ham-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    hops: int = 2
    level: str = "phrase"
    dim: int = 75
    embedding_dim: int | None = None
    attention: bool = True
    tie_encoders: bool = True
    per_hop_memory: bool = False
    train_embeddings: bool = True
    forget_bias: float = 1.0
    init_scale: float = 0.05
    lr: float = 0.002
    eps: float = 1e-8
    epochs: int = 100
    seed: int = 0
    patience: int = 25
    batch_size: int = 1
    clip: float | None = None
    workers: int = 1
    vectors: str | None = None
    train_path: str | None = None
    dev_path: str | None = None

    def __post_init__(self):
        if not 1 <= self.hops <= 3:
            raise ConfigError(f"hops must be in 1..3, got {self.hops}")
        if self.dim < 1 or (self.embedding_dim is not None and self.embedding_dim < 1):
            raise ConfigError("dimensions must be positive")
        if self.epochs < 0 or self.batch_size < 0 or self.patience < 1:
            raise ConfigError("epochs and batch_size must be >= 0, patience >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.dim,
            embedding_dim=self.embedding_dim,
            memory_dim=self.dim,
            hops=self.hops,
            level=self.level,
            attention=self.attention,
            tie_encoders=self.tie_encoders,
            per_hop_memory=self.per_hop_memory,
            train_embeddings=self.train_embeddings,
            forget_bias=self.forget_bias,
            init_scale=self.init_scale,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


# ---------------------------------------------------------------------------
# AdaGrad


@dataclass
class AdaGradState:
    lr: float = 0.002
    eps: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdaGradState) -> None:
    """In-place update ``acc += g**2; theta -= lr * g / (sqrt(acc) + eps)``."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for {missing}")
    for name, theta in params.items():
        g = grads[name]
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(theta)
        acc += g * g
        theta -= state.lr * g / (np.sqrt(acc) + state.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    k = max_norm / norm
    return {n: g * k for n, g in grads.items()}


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    accuracy: float
    records: list[dict]

    def jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)


def evaluate(model, dataset, tag: str | None = None) -> EvalReport:
    """Accuracy under exact set match, plus one record per problem.

    ``model`` needs ``predict_distribution(problem)``; selection takes the
    top ``|correct|`` entries.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("accuracy is undefined on an empty dataset")
    records, hits = [], 0
    for problem in dataset:
        p_hat = np.asarray(model.predict_distribution(problem), dtype=np.float64)
        chosen = select(p_hat, problem.n_correct)
        ok = grade(chosen, problem.correct)
        hits += ok
        rec = {"id": problem.id, "p_hat": [float(x) for x in p_hat], "selected": sorted(chosen), "correct": ok}
        if tag:
            rec["model"] = tag
        records.append(rec)
    return EvalReport(hits / len(dataset), records)


def _accuracy(model, dataset) -> float:
    return evaluate(model, dataset).accuracy


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_accuracy: float


@dataclass
class TrainResult:
    model: HamModel
    metrics: list[EpochMetrics]
    best_epoch: int

    def metrics_csv(self) -> str:
        return metrics_csv(self.metrics)


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "dev_accuracy"])
    for m in metrics:
        w.writerow([m.epoch, repr(m.train_loss), repr(m.dev_accuracy)])
    return buf.getvalue()


def problem_words(problems):
    for p in problems:
        for t in (*p.story, *p.question, *(s for c in p.choices for s in c)):
            yield from t.words


def init_model(config: TrainConfig, train_set) -> HamModel:
    vocab = build_vocabulary(problem_words(train_set))
    pretrained = load_vectors(config.vectors) if config.vectors else None
    mc = config.model_config()
    if pretrained is not None and config.embedding_dim is None:
        mc.embedding_dim = pretrained.dim
    return HamModel.initialize(mc, vocab, config.seed, pretrained)


def _batch_gradients(model, batch, workers):
    """Sum of per-example (loss, grads), accumulated in batch order."""
    if workers > 1 and len(batch) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(model.loss_and_grads, batch))
    else:
        results = [model.loss_and_grads(p) for p in batch]
    losses = [r[0] for r in results]
    total = {n: g.copy() for n, g in results[0][1].items()}
    for _, g in results[1:]:
        for n in total:
            total[n] += g[n]
    return losses, total


def _finite_loss(model, problem) -> bool:
    try:
        return math.isfinite(model.loss(problem))
    except NonFiniteError:
        return False


def mean_gradients(model, problems, workers=1):
    losses, total = _batch_gradients(model, list(problems), workers)
    k = 1.0 / len(losses)
    return float(np.mean(losses)), {n: g * k for n, g in total.items()}


def train(config: TrainConfig, train_set, dev_set, model: HamModel | None = None, on_epoch=None) -> TrainResult:
    """Per-example (or mini-batch) AdaGrad with dev-accuracy model selection.

    Returns the parameters from the epoch with the best dev accuracy (the
    earliest on ties); stops after ``patience`` epochs without improvement.
    """
    train_set, dev_set = list(train_set), list(dev_set)
    if not train_set or not dev_set:
        raise EmptyDatasetError("training and dev splits must be nonempty")
    model = model if model is not None else init_model(config, train_set)
    if config.epochs == 0:
        return TrainResult(model, [], 0)
    state = AdaGradState(config.lr, config.eps)
    batch = config.batch_size or len(train_set)
    best, best_acc, best_epoch, metrics = model.copy(), -1.0, 0, []
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        losses = []
        for start in range(0, len(order), batch):
            chunk = [train_set[i] for i in order[start:start + batch]]
            try:
                chunk_losses, total = _batch_gradients(model, chunk, config.workers)
            except NonFiniteError:
                bad = next(p for p in chunk if not _finite_loss(model, p))
                raise TrainingDiverged(epoch, bad.id, math.nan) from None
            for p, L in zip(chunk, chunk_losses):
                if not math.isfinite(L):
                    raise TrainingDiverged(epoch, p.id, L)
            losses.extend(chunk_losses)
            grads = {n: total[n] / len(chunk) for n in model.trainable_names}
            if config.clip:
                grads = clip_gradients(grads, config.clip)
            adagrad_step({n: model.params[n] for n in model.trainable_names}, grads, state)
        dev_acc = _accuracy(model, dev_set)
        m = EpochMetrics(epoch, float(np.mean(losses)), dev_acc)
        metrics.append(m)
        log.info("epoch %d train_loss %.6f dev_acc %.4f", epoch, m.train_loss, dev_acc)
        if on_epoch is not None:
            on_epoch(m)
        if dev_acc > best_acc:
            best, best_acc, best_epoch = model.copy(), dev_acc, epoch
        elif epoch - best_epoch >= config.patience:
            break
    return TrainResult(best, metrics, best_epoch)


def seed_sweep(config: TrainConfig, train_set, dev_set, test_set, seeds=range(10)):
    """Mean and standard deviation of test accuracy over several seeds."""
    accs = []
    for s in seeds:
        cfg = TrainConfig(**{**config.to_json(), "seed": int(s)})
        result = train(cfg, train_set, dev_set)
        accs.append(_accuracy(result.model, test_set))
    return float(np.mean(accs)), float(np.std(accs)), accs


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_json(model, extra))


def checkpoint_json(model, extra: dict | None = None) -> str:
    if isinstance(model, StubModel):
        doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": "stub",
               "stub": model.kind, "guess": model.guess, "seed": model.seed}
    else:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": "ham",
            "config": model.config.to_json(),
            "vocabulary": sorted(model.vocabulary, key=model.vocabulary.get),
            "tensors": {
                n: {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}
                for n, a in model.params.items()
            },
        }
    if extra:
        doc["meta"] = extra
    return json.dumps(doc)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    if doc["kind"] == "stub":
        return StubModel(doc["stub"], doc.get("guess", 0), doc.get("seed", 0))
    vocab = {w: i for i, w in enumerate(doc["vocabulary"])}
    params = {
        n: np.array(t["data"], dtype=np.float64).reshape(t["shape"]) for n, t in doc["tensors"].items()
    }
    return HamModel(ModelConfig(**doc["config"]), params, vocab)


class StubModel:
    """Non-learning stand-ins used to test the evaluation path.

    ``oracle`` puts all mass on the annotated answers, ``fixed`` always picks
    choice ``guess``, ``chance`` guesses uniformly from a seeded generator.
    """

    KINDS = ("oracle", "fixed", "chance")

    def __init__(self, kind: str, guess: int = 0, seed: int = 0):
        if kind not in self.KINDS:
            raise ValueError(f"stub kind must be one of {self.KINDS}")
        self.kind, self.guess, self.seed = kind, guess, seed
        self._rng = np.random.default_rng(seed)

    def predict_distribution(self, problem):
        K = problem.k
        p = np.full(K, 0.1 / K)
        if self.kind == "oracle":
            for i in problem.correct:
                p[i] += 1.0
        elif self.kind == "fixed":
            p[self.guess % K] += 1.0
        else:
            p[int(self._rng.integers(K))] += 1.0
        return p / p.sum()


# ---------------------------------------------------------------------------
# gradient checking


def numerical_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


REL_ERR_FLOOR = 1e-5


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise.

    The floor keeps entries that are zero on both sides from dividing by
    nothing; below it the measure becomes an absolute error scaled by 1/floor.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    flagged: list[tuple[str, int, float, float]]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.flagged

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_error:.3e} tolerance={self.tolerance:g} flagged={len(self.flagged)}"


def grad_check(model: HamModel, problem, tolerance: float = 1e-5, step: float = 1e-5) -> GradCheckReport:
    """Compare ``model.loss_and_grads`` against central differences on every trainable entry."""
    _, analytic = model.loss_and_grads(problem)
    errors, flagged = {}, []
    for name in model.trainable_names:
        numeric = numerical_gradient(lambda: model.loss(problem), model.params[name], step)
        err = relative_error(analytic[name], numeric)
        errors[name] = float(err.max()) if err.size else 0.0
        for i in np.flatnonzero(err.reshape(-1) > tolerance):
            flagged.append((name, int(i), float(analytic[name].reshape(-1)[i]), float(numeric.reshape(-1)[i])))
    return GradCheckReport(errors, flagged, tolerance)


def min_cosine_norm(model: HamModel, problem) -> float:
    """Smallest norm among all vectors entering a cosine in one forward pass."""
    fw = model.forward(problem, grad=False)
    norms = [np.linalg.norm(fw.output.value), np.linalg.norm(fw.choices.value, axis=1).min()]
    if fw.trace is not None:
        for hop in fw.trace.hops:
            norms.append(np.linalg.norm(hop.query))
            norms.append(np.linalg.norm(hop.keys, axis=1).min())
    return float(min(norms))


CONDITIONING_MARGIN = 0.01


def random_gradcheck(n_models: int = 50, seed: int = 0, tolerance: float = 1e-5, max_dim: int = 6,
                     margin: float = CONDITIONING_MARGIN):
    """Gradient-check freshly initialised small models on random problems.

    Cycles through hop counts {1, 2} and both attention levels.  Draws whose
    cosine operands have a norm below ``margin`` are redrawn: near the cosine
    singularity a 1e-5 central difference is no longer accurate to 1e-5.
    Returns a list of ``(description, GradCheckReport)``.
    """
    from .datagen import random_problem

    vocab = build_vocabulary(f"w{i}" for i in range(8))
    reports = []
    for m in range(n_models):
        hops = 1 + m % 2
        level = ("phrase", "sentence")[(m // 2) % 2]
        for attempt in range(100):
            rng = np.random.default_rng([seed, m, attempt])
            problem = random_problem(rng)
            d = int(rng.integers(2, max_dim + 1))
            mc = ModelConfig(hidden_dim=d, hops=hops, level=level, init_scale=0.5)
            model = HamModel.initialize(mc, vocab, int(rng.integers(2**31)))
            if min_cosine_norm(model, problem) >= margin:
                break
        desc = f"model {m}: d={d} hops={hops} level={level} redraws={attempt}"
        reports.append((desc, grad_check(model, problem, tolerance)))
    return reports
