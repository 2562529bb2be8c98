"""Training, evaluation, and ablation: the end-to-end pipeline.

The objective is the classification cross-entropy plus depth-supervision
terms: ``L = L_c + alpha * L_ssim + beta * L_patch / batch_size``. The patch
term is a literal sum over the batch, so the trainer divides it by the batch
size to keep alpha/beta meaningful across batch sizes (raw and normalized
values are both logged).
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import BackboneConfig
from .depth_gt import PatchGrid, normalize_patch_depth, patch_average
from .exceptions import ContractViolation, NonFiniteLossError
from .fdmt import FdmtConfig
from .losses import LossWeights, batch_ssim_loss, patch_mse_and_grad, total_loss
from .metrics import MetricsReport, accuracy, auc
from .model import DetectionModel, ModelConfig
from .nn import functional as F
from .nn.optim import Adam
from .synth import FAKE


def mini_model_config(fusion="mda", injection_index=3, **overrides):
    """Desk-scale model sized for 32x32 synthetic data."""
    fdmt = None
    if fusion in ("mda", "concat") or overrides.pop("with_fdmt", False):
        fdmt = FdmtConfig(
            image_size=32, patches_per_side=8, embed_dim=32, blocks=2, heads=4, mlp_ratio=2.0
        )
    backbone = BackboneConfig(
        blocks=((8, 2), (16, 1), (16, 2), (32, 1), (32, 1), (32, 1)),
        injection_index=injection_index,
        head_width=32,
    )
    defaults = dict(
        image_size=32,
        backbone=backbone,
        fdmt=fdmt,
        fusion=fusion,
        mda_heads=2,
        mda_head_width=8,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def paper_model_config(fusion="mda", injection_index=3, **overrides):
    """Configuration shaped like the reference setup (224x224, 14x14 patches)."""
    fdmt = None
    if fusion in ("mda", "concat"):
        fdmt = FdmtConfig()
    defaults = dict(
        image_size=224,
        backbone=BackboneConfig(injection_index=injection_index),
        fdmt=fdmt,
        fusion=fusion,
        mda_heads=8,
        mda_head_width=16,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


MODEL_PROFILES = {"mini": mini_model_config, "paper": paper_model_config}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    alpha: float = 0.7
    beta: float = 0.7
    seed: int = 0
    staged_pretrain_epochs: int = 0  # depth-only warmup before joint training
    select_best_val: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ContractViolation("bad optimizer hyperparameters")
        if self.staged_pretrain_epochs and self.model.fdmt is None:
            raise ContractViolation("staged pretraining requires the depth estimator")
        LossWeights(self.alpha, self.beta)  # validates non-negativity

    @property
    def weights(self):
        return LossWeights(self.alpha, self.beta)

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        model_spec = d.pop("model")
        if isinstance(model_spec, str):
            model = MODEL_PROFILES[model_spec]()
        else:
            model = ModelConfig.from_dict(model_spec)
        return cls(model=model, **d)

    def config_hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunLog:
    """Append-only record of one training run.

    ``steps`` and ``epochs`` are the deterministic trajectory (bitwise
    reproducible under a fixed seed, single worker); wall-clock time is run
    metadata and excluded from trajectory comparison.
    """

    config_hash: str
    seed: int
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    selected_epoch: int | None = None
    wall_clock_s: float = 0.0

    def trajectory_equal(self, other):
        return (
            self.config_hash == other.config_hash
            and self.seed == other.seed
            and self.steps == other.steps
            and self.epochs == other.epochs
            and self.selected_epoch == other.selected_epoch
        )

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class TrainResult:
    model: DetectionModel
    run_log: RunLog


def depth_targets(records, grid):
    """(N, P) normalized per-patch ground-truth depth for a list of records."""
    return np.stack(
        [normalize_patch_depth(patch_average(rec.depth, grid)) for rec in records]
    )


def _stack_images(records):
    return np.stack([rec.image for rec in records])


def _labels(records):
    return np.array([rec.label for rec in records], dtype=np.int64)


def _param_norms(model):
    return {name: float(np.linalg.norm(p.value)) for name, p in model.named_parameters()}


def train(config, splits):
    """Optimize the full objective; returns TrainResult with a reproducible log.

    ``splits`` maps split names to record lists; "train" is required, "val"
    (when present and ``select_best_val``) drives best-checkpoint selection.
    """
    if "train" not in splits or not splits["train"]:
        raise ContractViolation("dataset has no train split")
    records = splits["train"]
    image_size = records[0].image.shape[0]
    if image_size != config.model.image_size:
        raise ContractViolation(
            f"dataset images are {image_size}px but the model expects "
            f"{config.model.image_size}px"
        )

    start_time = time.monotonic()
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=[config.seed, 0]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=[config.seed, 1]))
    model = DetectionModel(config.model, init_rng)
    optimizer = Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)

    images = _stack_images(records)
    labels = _labels(records)
    use_depth = model.fdmt is not None
    targets = None
    if use_depth:
        g = config.model.fdmt
        grid = PatchGrid(g.image_size, g.image_size, g.patches_per_side)
        targets = depth_targets(records, grid)

    log = RunLog(config_hash=config.config_hash(), seed=config.seed)
    weights = config.weights
    n = len(records)
    step = 0
    best_val = -1.0
    best_state = None

    total_epochs = config.staged_pretrain_epochs + config.epochs
    for epoch in range(total_epochs):
        depth_only = epoch < config.staged_pretrain_epochs
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits, depth_pred, cache = model.forward(images[idx])
            l_c, dlogits = F.cross_entropy_with_logits(logits, labels[idx])
            l_ssim = l_patch_raw = 0.0
            d_depth = None
            if use_depth:
                batch_targets = targets[idx]
                l_ssim, g_ssim = batch_ssim_loss(depth_pred, batch_targets)
                l_patch_raw, g_patch = patch_mse_and_grad(depth_pred, batch_targets)
                d_depth = weights.alpha * g_ssim + weights.beta * g_patch / len(idx)
            l_patch = l_patch_raw / len(idx)
            if not np.all(np.isfinite([l_c, l_ssim, l_patch])):
                raise NonFiniteLossError(
                    f"non-finite loss at step {step}",
                    snapshot={
                        "step": step,
                        "epoch": epoch,
                        "losses": {
                            "l_c": float(l_c),
                            "l_ssim": float(l_ssim),
                            "l_patch": float(l_patch),
                        },
                        "param_norms": _param_norms(model),
                    },
                )
            if depth_only:
                l_total = total_loss(0.0, l_ssim, l_patch, weights)
                dlogits = np.zeros_like(dlogits)
            else:
                l_total = total_loss(l_c, l_ssim, l_patch, weights)
            model.zero_grad()
            model.backward(dlogits, d_depth, cache)
            optimizer.step()
            log.steps.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "l_total": float(l_total),
                    "l_c": float(l_c),
                    "l_ssim": float(l_ssim),
                    "l_patch": float(l_patch),
                    "l_patch_raw": float(l_patch_raw),
                }
            )
            step += 1

        entry = {"epoch": epoch, "depth_only": depth_only}
        if config.select_best_val and splits.get("val"):
            report = evaluate(
                model, splits["val"], "val", weights, config.config_hash(), config.seed
            )
            entry["val_acc"] = report.acc
            entry["val_auc"] = report.auc
            if not depth_only and report.acc >= best_val:
                best_val = report.acc
                best_state = model.state_dict()
                log.selected_epoch = epoch
        log.epochs.append(entry)

    if best_state is not None:
        model.load_state_dict(best_state)
    log.wall_clock_s = time.monotonic() - start_time
    return TrainResult(model=model, run_log=log)


def evaluate(model, records, split_name, weights=LossWeights(), config_hash="", seed=0, batch_size=64):
    """Metrics on one split; never mutates weights."""
    if not records:
        raise ContractViolation(f"split {split_name!r} is empty")
    images = _stack_images(records)
    labels = _labels(records)
    use_depth = model.fdmt is not None
    targets = None
    if use_depth:
        g = model.config.fdmt
        grid = PatchGrid(g.image_size, g.image_size, g.patches_per_side)
        targets = depth_targets(records, grid)

    scores = np.empty(len(records))
    term_sums = {"l_c": 0.0, "l_ssim": 0.0, "l_patch": 0.0}
    n_batches = 0
    for start in range(0, len(records), batch_size):
        sl = slice(start, start + batch_size)
        batch = images[sl]
        logits, depth_pred, _ = model.forward(batch)
        scores[sl] = F.softmax(logits, axis=-1)[:, 1]
        l_c, _ = F.cross_entropy_with_logits(logits, labels[sl])
        term_sums["l_c"] += float(l_c)
        if use_depth:
            l_ssim, _ = batch_ssim_loss(depth_pred, targets[sl])
            term_sums["l_ssim"] += float(l_ssim)
            term_sums["l_patch"] += patch_mse_and_grad(depth_pred, targets[sl])[0] / len(batch)
        n_batches += 1

    terms = {k: v / n_batches for k, v in term_sums.items()}
    terms["l_total"] = total_loss(terms["l_c"], terms["l_ssim"], terms["l_patch"], weights)
    predicted = (scores > 0.5).astype(np.int64)
    return MetricsReport(
        split=split_name,
        count=len(records),
        acc=accuracy(predicted, labels),
        auc=auc(scores, (labels == FAKE).astype(np.int64)),
        loss_terms=terms,
        config_hash=config_hash,
        seed=seed,
    )


ABLATION_VARIANTS = (
    "baseline",
    "concat-depth",
    "full-mda",
    "self-attention",
    "injection-early",
    "injection-middle",
    "injection-late",
)


def variant_config(base, name):
    """Derive a TrainConfig for one ablation variant from the base config."""
    model = base.model
    n_blocks = len(model.backbone.blocks)
    maker = mini_model_config if model.image_size == 32 else paper_model_config

    def remodel(fusion, injection=None):
        return maker(
            fusion=fusion,
            injection_index=injection or model.backbone.injection_index,
            mda_heads=model.mda_heads,
            mda_head_width=model.mda_head_width,
        )

    if name == "baseline":
        new_model = remodel("none")
    elif name == "concat-depth":
        new_model = remodel("concat")
    elif name == "full-mda":
        new_model = remodel("mda")
    elif name == "self-attention":
        new_model = remodel("msa")
    elif name == "injection-early":
        new_model = remodel("mda", injection=1)
    elif name == "injection-middle":
        new_model = remodel("mda", injection=n_blocks // 2)
    elif name == "injection-late":
        new_model = remodel("mda", injection=n_blocks - 1)
    else:
        raise ContractViolation(f"unknown ablation variant {name!r}")
    d = base.to_dict()
    d["model"] = new_model.to_dict()
    return TrainConfig.from_dict(d)


@dataclass
class AblationRow:
    variant: str
    seeds: list
    accs: list
    aucs: list

    @property
    def mean_acc(self):
        return float(np.mean(self.accs))

    @property
    def std_acc(self):
        return float(np.std(self.accs, ddof=1)) if len(self.accs) > 1 else 0.0

    @property
    def mean_auc(self):
        return float(np.mean(self.aucs))

    @property
    def std_auc(self):
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else 0.0


def ablate(base_config, splits, variants=ABLATION_VARIANTS, seeds=(0, 1, 2), eval_split="test"):
    """Train each variant with each seed and tabulate metrics on one split."""
    if eval_split not in splits or not splits[eval_split]:
        raise ContractViolation(f"missing evaluation split {eval_split!r}")
    rows = []
    for name in variants:
        accs, aucs = [], []
        for seed in seeds:
            cfg_dict = variant_config(base_config, name).to_dict()
            cfg_dict["seed"] = int(seed)
            cfg = TrainConfig.from_dict(cfg_dict)
            result = train(cfg, splits)
            report = evaluate(
                result.model, splits[eval_split], eval_split, cfg.weights,
                cfg.config_hash(), seed,
            )
            accs.append(report.acc)
            aucs.append(report.auc)
        rows.append(AblationRow(variant=name, seeds=list(seeds), accs=accs, aucs=aucs))
    return rows


def format_ablation_table(rows):
    lines = [f"{'variant':<18} {'ACC mean':>9} {'ACC std':>8} {'AUC mean':>9} {'AUC std':>8}"]
    for row in rows:
        lines.append(
            f"{row.variant:<18} {row.mean_acc:>9.4f} {row.std_acc:>8.4f} "
            f"{row.mean_auc:>9.4f} {row.std_auc:>8.4f}"
        )
    return "\n".join(lines)
