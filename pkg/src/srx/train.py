"""Training, evaluation and retrieval over a manifest-described dataset."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_io import Dataset, load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericalError, ValidationError
from .matching import DEFAULT_PAIRING, MatchConfig
from .metrics import RetrievalReport, evaluate, write_reports
from .model import ModelConfig, RetrievalModel, SimilarityMatrix, score_matrix
from .visual import DEFAULT_FEATURE_MODE

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


@dataclass
class RunConfig:
    seed: int = 0
    margin: float = 0.2
    epochs: int = 100
    batch_size: int = 32
    d_model: int = 32
    heads: int = 4
    gcn_layers: int = 2
    pairing: dict = field(default_factory=lambda: dict(DEFAULT_PAIRING))
    mining: str = "hardest"
    features_mode: str = DEFAULT_FEATURE_MODE
    lr: float = 0.05
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (the ranking loss needs negatives)")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        self.match_config()

    def match_config(self) -> MatchConfig:
        return MatchConfig(margin=self.margin, pairing=dict(self.pairing), mining=self.mining)

    def model_config(self, dataset: Dataset) -> ModelConfig:
        m = dataset.manifest
        return ModelConfig(
            feature_dim=m.feature_dim,
            word_dim=dataset.word_vectors.shape[1],
            n_relations=m.n_relations,
            d_model=self.d_model,
            heads=self.heads,
            gcn_layers=self.gcn_layers,
            feature_mode=self.features_mode,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        doc = json.loads(Path(path).read_text()) if path else {}
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1, c2 = 1 - self.beta1 ** self.t, 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * p.grad
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * p.grad ** 2
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self) -> dict:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load(self, tensors: dict, t: int):
        for k in self.params:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()
        self.t = t


class SGD:
    def __init__(self, params: dict, lr: float):
        self.params, self.lr = params, lr
        self.t = 0

    def step(self):
        self.t += 1
        for p in self.params.values():
            p.data = p.data - self.lr * p.grad

    def state(self) -> dict:
        return {}

    def load(self, tensors: dict, t: int):
        self.t = t


@dataclass
class TrainResult:
    model: RetrievalModel
    history: list  # mean training loss per epoch
    epoch: int
    checkpoint: Path | None = None


def training_pairs(dataset: Dataset) -> list[tuple[str, str]]:
    return [(cid, dataset.caption_clip[cid]) for cid in dataset.caption_ids]


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, 1000 + epoch]).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        # a singleton batch has no negatives; fold it into its predecessor
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def _checkpoint_meta(cfg: RunConfig, model_cfg: ModelConfig, epoch: int, step: int, history: list) -> dict:
    return {"run": cfg.to_dict(), "model": model_cfg.to_dict(), "epoch": epoch, "step": step, "history": history}


def save_training_state(path, model: RetrievalModel, optimizer, cfg: RunConfig, epoch: int, history: list) -> Path:
    tensors = model.state_dict()
    tensors.update(optimizer.state())
    return save_checkpoint(path, tensors, _checkpoint_meta(cfg, model.config, epoch, optimizer.t, history))


def load_model(path) -> tuple[RetrievalModel, dict, dict]:
    tensors, meta = load_checkpoint(path)
    try:
        model = RetrievalModel(ModelConfig(**meta["model"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"checkpoint metadata lacks a usable model config: {exc}") from None
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    return model, tensors, meta


def _check_compatible(model_cfg: ModelConfig, dataset: Dataset):
    m = dataset.manifest
    if (model_cfg.feature_dim, model_cfg.word_dim) != (m.feature_dim, dataset.word_vectors.shape[1]):
        raise ConfigError(
            f"model expects feature/word dims {(model_cfg.feature_dim, model_cfg.word_dim)}, dataset has "
            f"{(m.feature_dim, dataset.word_vectors.shape[1])}"
        )
    if model_cfg.n_relations < m.n_relations:
        raise ConfigError(f"model knows {model_cfg.n_relations} relations, dataset uses {m.n_relations}")


def train(cfg: RunConfig, dataset: Dataset, out_dir=None, resume=None, stop_after: int | None = None) -> TrainResult:
    """Mini-batch training with the ranking loss.

    ``resume`` continues from a checkpoint written by an earlier call;
    ``stop_after`` ends the run after that many total epochs (as if
    interrupted). Batch order depends only on (seed, epoch), so a resumed run
    reproduces an uninterrupted one exactly.
    """
    match = cfg.match_config()
    model_cfg = cfg.model_config(dataset)
    _check_compatible(model_cfg, dataset)
    model = RetrievalModel(model_cfg)
    params = dict(model.named_parameters())
    optimizer = Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)
    history: list = []
    start = 0
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        if meta.get("run") != cfg.to_dict():
            raise ConfigError("checkpoint was written with a different run configuration")
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
        optimizer.load(tensors, meta["step"])
        history = list(meta["history"])
        start = meta["epoch"]

    pairs = training_pairs(dataset)
    if len(pairs) < 2:
        raise ConfigError("training needs at least 2 caption/clip pairs")
    end = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, end):
        total, count = 0.0, 0
        for batch in epoch_batches(len(pairs), cfg.batch_size, cfg.seed, epoch):
            graphs = [dataset.graphs[pairs[i][0]] for i in batch]
            clips = [dataset.clips[pairs[i][1]] for i in batch]
            model.zero_grad()
            loss = model.loss(graphs, clips, dataset.word_vectors, match)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            loss.backward()
            optimizer.step()
            bad = next((k for k, t in params.items() if not np.all(np.isfinite(t.data))), None)
            if bad is not None:
                raise NumericalError(f"parameter {bad} became non-finite at epoch {epoch + 1}")
            total += value * len(batch)
            count += len(batch)
        history.append(total / count)
        log.info("epoch %d loss %.6f", epoch + 1, history[-1])

    checkpoint = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint = save_training_state(out / "checkpoint.srxc", model, optimizer, cfg, end, history)
        write_loss_history(out / "loss_history.tsv", history)
    return TrainResult(model, history, end, checkpoint)


def write_loss_history(path, history) -> Path:
    path = Path(path)
    path.write_text("epoch\tloss\n" + "".join(f"{i + 1}\t{v!r}\n" for i, v in enumerate(history)))
    return path


def read_loss_history(path) -> list[float]:
    lines = Path(path).read_text().splitlines()[1:]
    return [float(line.split("\t")[1]) for line in lines if line]


def evaluate_model(model: RetrievalModel, dataset: Dataset, match: MatchConfig | None = None
                   ) -> tuple[RetrievalReport, SimilarityMatrix]:
    _check_compatible(model.config, dataset)
    sim = score_matrix(dataset.graphs, dataset.clips, model, dataset.word_vectors, match)
    truth = [dataset.caption_clip[c] for c in sim.caption_ids]
    return evaluate(sim.scores, truth, clip_ids=sim.clip_ids), sim


def evaluate_checkpoint(checkpoint, dataset: Dataset, out_dir=None) -> tuple[RetrievalReport, SimilarityMatrix]:
    model, _, meta = load_model(checkpoint)
    run = RunConfig.from_dict(meta["run"]) if "run" in meta else RunConfig()
    rep, sim = evaluate_model(model, dataset, run.match_config())
    if out_dir is not None:
        out = Path(out_dir)
        write_reports(rep, out)
        np.save(out / "scores.npy", sim.scores)
    return rep, sim


def retrieve(sim: SimilarityMatrix, caption_id: str, k: int) -> list[tuple[str, float]]:
    """Top-``k`` clips for one caption; equal scores are ordered by clip id."""
    if caption_id not in sim.caption_ids:
        raise ValidationError(f"unknown caption id {caption_id!r}")
    row = sim.scores[sim.caption_ids.index(caption_id)]
    ranked = sorted(zip(sim.clip_ids, row.tolist()), key=lambda item: (-item[1], item[0]))
    return ranked[:max(k, 0)]
