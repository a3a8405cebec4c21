"""Training loops for the method family, evaluation, probes, and run records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import losses
from .data import (
    DomainBatch,
    LabeledSet,
    ShiftSpec,
    apply_shift,
    batch_iter,
    gen_blobs,
    gen_two_moons,
    load_idx,
    standardize_pair,
)
from .kernels import pairwise_sq_dists, rbf_kernel_sums
from .nn import (
    Mlp,
    ScheduleParams,
    init_mlp,
    lambda_schedule,
    lr_schedule,
    make_optimizer,
    zero_grads,
)
from .tensor import NonFiniteError, Tensor, add, backward, grl, scale, sigmoid

# method -> (discriminator kind, regularization term on, target-loss kind)
METHOD_WIRING: dict[str, tuple[str, bool, str]] = {
    "source_only": ("none", False, "none"),
    "st": ("none", False, "pseudo_ce"),
    "dann": ("domain", False, "none"),
    "dann_st": ("domain", False, "pseudo_ce"),
    "alda": ("noise", True, "corrected_unhinged"),
    "alda_no_reg": ("noise", False, "corrected_unhinged"),
    "alda_no_lt": ("noise", True, "none"),
    "alda_st_no_lt": ("noise", True, "pseudo_ce"),
    "alda_ce_basic": ("noise", True, "corrected_ce"),
}

METHODS = tuple(METHOD_WIRING)

DATASETS = ("two_moons", "blobs", "idx")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries the record collected so far."""

    def __init__(self, step: int, message: str, record: "RunRecord"):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.record = record


@dataclass
class RunConfig:
    """Complete, seedable description of one experiment."""

    method: str = "alda"
    dataset: str = "two_moons"
    # synthetic dataset shape
    n_per_domain: int = 2000
    moons_noise: float = 0.08
    blobs_k: int = 5
    blobs_spread: float = 0.6
    blobs_centers_seed: int = 7
    # shift applied to the target domain draw
    shift_rotation_deg: float = 35.0
    shift_tx: float = 0.3
    shift_ty: float = -0.2
    shift_scale: float = 1.0
    shift_noise: float = 0.08
    # IDX ingestion (digit domains)
    source_images: str = ""
    source_labels: str = ""
    target_images: str = ""
    target_labels: str = ""
    source_limit: int = 0  # 0 = use everything
    target_limit: int = 0
    # optimization
    delta: float = 0.9
    total_steps: int = 2000
    batch: int = 64
    seed_init: int = 1
    seed_data: int = 2
    optimizer: str = "sgd"
    eta0: float = 0.01
    sched_alpha: float = 10.0
    sched_beta: float = 0.75
    # from-scratch desk-scale nets; the x10 head multiple used for pretrained
    # backbones makes this tiny discriminator diverge, so it defaults off
    head_lr_mult: float = 1.0
    momentum: float = 0.9
    hidden: int = 64
    feature_dim: int = 64
    dropout: float = 0.25
    # probes and debug switches
    probe_every: int = 50
    mmd_probe_n: int = 512
    force_lambda: float = -1.0  # >= 0 pins the trade-off for every step
    reg_to_generator: bool = False  # let the source-classification term reach G
    soft_pseudo: bool = False  # soft classifier rows instead of hard one-hots in c

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.probe_every < 1:
            raise ValueError("probe_every must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be sgd or adam")
        if self.dataset == "idx" and not all(
            (self.source_images, self.source_labels, self.target_images, self.target_labels)
        ):
            raise ValueError("idx dataset needs all four image/label paths")
        return self


@dataclass
class RecordRow:
    step: int
    q: float
    lam: float
    lr: float
    src_acc: float
    tgt_acc: float
    accepted_frac: float
    l_src_ce: float
    l_adv_s: float
    l_adv_t: float
    l_reg: float
    l_t: float
    mmd: float


RECORD_HEADER = "step,q,lambda,lr,src_acc,tgt_acc,accepted_frac,l_src_ce,l_adv_s,l_adv_t,l_reg,l_t,mmd"


@dataclass
class RunRecord:
    rows: list[RecordRow] = field(default_factory=list)

    def to_csv_text(self) -> str:
        # repr() round-trips float64 exactly, keeping records byte-stable
        lines = [RECORD_HEADER]
        for r in self.rows:
            lines.append(
                ",".join(
                    [str(r.step)]
                    + [
                        repr(float(v))
                        for v in (
                            r.q,
                            r.lam,
                            r.lr,
                            r.src_acc,
                            r.tgt_acc,
                            r.accepted_frac,
                            r.l_src_ce,
                            r.l_adv_s,
                            r.l_adv_t,
                            r.l_reg,
                            r.l_t,
                            r.mmd,
                        )
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def final(self) -> RecordRow:
        if not self.rows:
            raise ValueError("empty record")
        return self.rows[-1]


# -- dataset assembly ---------------------------------------------------------


def make_datasets(cfg: RunConfig) -> tuple[LabeledSet, LabeledSet]:
    """Materialize the configured source/target pair, standardized by source stats."""
    seeds = np.random.SeedSequence(cfg.seed_data).spawn(3)
    spec = ShiftSpec(
        rotation=math.radians(cfg.shift_rotation_deg),
        translation=(cfg.shift_tx, cfg.shift_ty),
        scale=cfg.shift_scale,
        noise_std=cfg.shift_noise,
    )
    if cfg.dataset == "two_moons":
        src = gen_two_moons(cfg.n_per_domain, cfg.moons_noise, seed=seeds[0])
        tgt_base = gen_two_moons(cfg.n_per_domain, cfg.moons_noise, seed=seeds[1])
        tgt = apply_shift(tgt_base, spec, seed=seeds[2])
        src, tgt, _ = standardize_pair(src, tgt)
        return src, tgt
    if cfg.dataset == "blobs":
        src = gen_blobs(
            cfg.n_per_domain, cfg.blobs_k, cfg.blobs_centers_seed, cfg.blobs_spread, seed=seeds[0]
        )
        tgt_base = gen_blobs(
            cfg.n_per_domain, cfg.blobs_k, cfg.blobs_centers_seed, cfg.blobs_spread, seed=seeds[1]
        )
        tgt = apply_shift(tgt_base, spec, seed=seeds[2])
        src, tgt, _ = standardize_pair(src, tgt)
        return src, tgt
    src, stats = load_idx(
        cfg.source_images,
        cfg.source_labels,
        limit=cfg.source_limit or None,
        seed=seeds[0],
        domain="source",
    )
    tgt, _ = load_idx(
        cfg.target_images,
        cfg.target_labels,
        limit=cfg.target_limit or None,
        seed=seeds[1],
        stats=stats,
        domain="target",
    )
    k = max(src.n_classes, tgt.n_classes)
    return replace(src, n_classes=k), replace(tgt, n_classes=k)


def _build_models(cfg: RunConfig, in_dim: int, n_classes: int):
    seeds = np.random.SeedSequence(cfg.seed_init).spawn(4)
    gen = init_mlp([in_dim, cfg.hidden, cfg.feature_dim], activation="relu", seed=seeds[0])
    clf = init_mlp([cfg.feature_dim, n_classes], seed=seeds[1])
    disc_kind = METHOD_WIRING[cfg.method][0]
    disc = None
    if disc_kind != "none":
        out = n_classes if disc_kind == "noise" else 1
        disc = init_mlp(
            [cfg.feature_dim, cfg.hidden, cfg.hidden, out],
            activation="relu",
            dropout=cfg.dropout,
            seed=seeds[2],
        )
    dropout_rng = np.random.default_rng(seeds[3])
    return gen, clf, disc, dropout_rng


# -- evaluation and probes -------------------------------------------------------


def _features(gen: Mlp, x: np.ndarray) -> np.ndarray:
    return gen(Tensor(x)).data


def _probs(gen: Mlp, clf: Mlp, x: np.ndarray) -> np.ndarray:
    return clf(Tensor(_features(gen, x))).softmax().data


def evaluate(gen: Mlp, clf: Mlp, data: LabeledSet) -> float:
    """Fraction of argmax predictions matching labels, dropout off."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred = _probs(gen, clf, data.features).argmax(axis=1)
    return float((pred == data.labels).mean())


def mmd_rbf(f_s: np.ndarray, f_t: np.ndarray, bandwidth: float | None = None) -> float:
    """Unbiased RBF-kernel MMD^2 between two feature samples.

    The kernel is exp(-|a-b|^2 / (2*bandwidth^2)); when ``bandwidth`` is not
    given it is set from the median pairwise distance of the pooled sample.
    The unbiased estimate can be slightly negative under the null.
    """
    f_s = np.asarray(f_s, dtype=np.float64)
    f_t = np.asarray(f_t, dtype=np.float64)
    if f_s.ndim != 2 or f_t.ndim != 2 or f_s.shape[1] != f_t.shape[1]:
        raise ValueError("feature matrices must be 2-D with equal width")
    m, n = len(f_s), len(f_t)
    if m < 2 or n < 2:
        raise ValueError("need at least 2 samples per side")
    if bandwidth is None:
        pooled = np.vstack([f_s, f_t])
        d2 = pairwise_sq_dists(pooled, pooled)
        off = d2[~np.eye(len(pooled), dtype=bool)]
        med = float(np.median(off))
        bandwidth = math.sqrt(med / 2.0) if med > 0.0 else 1.0
    elif bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    sxx, syy, sxy = rbf_kernel_sums(f_s, f_t, gamma)
    return float(sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n))


def accepted_fraction(gen: Mlp, clf: Mlp, target: LabeledSet, delta: float) -> float:
    probs = _probs(gen, clf, target.features)
    return float((probs.max(axis=1) > delta).mean())


# -- training ---------------------------------------------------------------------


def _corrected_rows(xi: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Vectorized per-row eta(xi) @ p_hat (the numpy twin of the graph version)."""
    k = xi.shape[1]
    off = (1.0 - xi) * p_hat
    return xi * p_hat + (off.sum(axis=1, keepdims=True) - off) / (k - 1)


def _domain_bce(d_logits: Tensor, is_source: bool) -> Tensor:
    n = d_logits.data.shape[0]
    target = np.ones((n, 1)) if is_source else np.zeros((n, 1))
    return losses.bce_mean_graph(sigmoid(d_logits), target)


def train(cfg: RunConfig) -> tuple[dict, RunRecord]:
    """Alternating-update training loop; returns frozen models and the probe record.

    Each iteration consumes one paired batch: first a discriminator step on
    its own objective, then a joint classifier+generator step in which the
    adversarial term reaches the generator only through grl(., lambda).
    """
    cfg.validate()
    disc_kind, use_reg, target_loss = METHOD_WIRING[cfg.method]
    source, target = make_datasets(cfg)
    n_classes = source.n_classes
    gen, clf, disc, dropout_rng = _build_models(cfg, source.features.shape[1], n_classes)

    opt_g = make_optimizer(cfg.optimizer, gen.params(), momentum=cfg.momentum)
    opt_c = make_optimizer(cfg.optimizer, clf.params(), momentum=cfg.momentum)
    opt_d = make_optimizer(cfg.optimizer, disc.params(), momentum=cfg.momentum) if disc else None

    data_seeds = np.random.SeedSequence(cfg.seed_data).spawn(5)
    batches = batch_iter(source, target, cfg.batch, seed=data_seeds[3])
    probe_rng = np.random.default_rng(data_seeds[4])
    n_probe_s = min(cfg.mmd_probe_n, len(source))
    n_probe_t = min(cfg.mmd_probe_n, len(target))
    probe_idx_s = probe_rng.choice(len(source), size=n_probe_s, replace=False)
    probe_idx_t = probe_rng.choice(len(target), size=n_probe_t, replace=False)

    sp = ScheduleParams(eta0=cfg.eta0, alpha=cfg.sched_alpha, beta=cfg.sched_beta)
    record = RunRecord()
    models = {"generator": gen, "classifier": clf, "discriminator": disc}

    for step in range(cfg.total_steps):
        q = step / cfg.total_steps
        lam = cfg.force_lambda if cfg.force_lambda >= 0.0 else lambda_schedule(q)
        base_lr = lr_schedule(q, sp)
        batch = next(batches)
        try:
            bundle = _train_step(
                cfg, batch, gen, clf, disc, opt_g, opt_c, opt_d, dropout_rng, lam, base_lr,
                disc_kind, use_reg, target_loss, n_classes,
            )
            if not all(
                math.isfinite(v)
                for v in (
                    bundle.l_src_ce,
                    bundle.l_adv_source,
                    bundle.l_adv_target,
                    bundle.l_reg,
                    bundle.l_target_corrected,
                )
            ):
                raise TrainingDiverged(step, "non-finite loss component", record)

            if step % cfg.probe_every == 0 or step == cfg.total_steps - 1:
                mmd = mmd_rbf(
                    _features(gen, source.features[probe_idx_s]),
                    _features(gen, target.features[probe_idx_t]),
                )
                record.rows.append(
                    RecordRow(
                        step=step,
                        q=q,
                        lam=lam,
                        lr=base_lr,
                        src_acc=evaluate(gen, clf, source),
                        tgt_acc=evaluate(gen, clf, target),
                        accepted_frac=accepted_fraction(gen, clf, target, cfg.delta),
                        l_src_ce=bundle.l_src_ce,
                        l_adv_s=bundle.l_adv_source,
                        l_adv_t=bundle.l_adv_target,
                        l_reg=bundle.l_reg,
                        l_t=bundle.l_target_corrected,
                        mmd=mmd,
                    )
                )
        except NonFiniteError as exc:
            raise TrainingDiverged(step, str(exc), record) from exc
    return models, record


def _train_step(
    cfg, batch, gen, clf, disc, opt_g, opt_c, opt_d, dropout_rng, lam, base_lr,
    disc_kind, use_reg, target_loss, n_classes,
) -> losses.LossBundle:
    xs, ys, xt = batch.source_features, batch.source_labels, batch.target_features

    # hard pseudo-labels from the current model state, dropout off
    feat_s = _features(gen, xs)
    feat_t = _features(gen, xt)
    probs_s = clf(Tensor(feat_s)).softmax().data
    probs_t = clf(Tensor(feat_t)).softmax().data
    s_idx, _, _ = losses.pseudo_labels(probs_s, 0.0)
    t_idx, _, t_acc = losses.pseudo_labels(probs_t, cfg.delta)
    n_acc = int(t_acc.sum())

    l_adv_s_val = l_adv_t_val = l_reg_val = 0.0

    # -- discriminator step on frozen features ---------------------------------
    if disc is not None:
        if disc_kind == "noise":
            d_s = disc(Tensor(feat_s), training=True, rng=dropout_rng)
            d_t = disc(Tensor(feat_t), training=True, rng=dropout_rng)
            l_adv_s, l_adv_t, _ = losses.adversarial_loss(
                sigmoid(d_s), s_idx, ys, sigmoid(d_t), t_idx, t_acc
            )
            l_reg = losses.reg_loss(d_s, ys) if use_reg else Tensor(0.0)
        else:
            d_s = disc(Tensor(feat_s), training=True, rng=dropout_rng)
            d_t = disc(Tensor(feat_t), training=True, rng=dropout_rng)
            l_adv_s = _domain_bce(d_s, is_source=True)
            l_adv_t = _domain_bce(d_t, is_source=False)
            l_reg = Tensor(0.0)
        d_obj = add(add(l_adv_s, l_adv_t), l_reg)
        zero_grads(disc.params())
        backward(d_obj)
        opt_d.step(base_lr * cfg.head_lr_mult)
        l_adv_s_val, l_adv_t_val, l_reg_val = l_adv_s.item(), l_adv_t.item(), l_reg.item()

    # -- joint classifier + generator step --------------------------------------
    fs = gen(Tensor(xs))
    ft = gen(Tensor(xt))
    total = losses.cross_entropy_mean_graph(clf(fs), ys)
    l_src_ce_val = total.item()

    l_t_val = 0.0
    if target_loss != "none" and n_acc > 0:
        if target_loss == "pseudo_ce":
            l_t = losses.cross_entropy_mean_graph(clf(ft), t_idx, row_mask=t_acc)
        else:
            # corrected labels from the freshly updated discriminator, dropout
            # off, held constant: no gradient flows into D through c
            xi_t = sigmoid(disc(Tensor(feat_t))).data
            p_hat = probs_t if cfg.soft_pseudo else losses.one_hot(t_idx, n_classes)
            c_rows = _corrected_rows(xi_t, p_hat)
            if target_loss == "corrected_unhinged":
                l_t = losses.corrected_target_loss_graph(
                    c_rows, clf(ft).softmax(), row_mask=t_acc
                )
            else:  # corrected_ce
                l_t = losses.soft_cross_entropy_mean_graph(clf(ft), c_rows, row_mask=t_acc)
        l_t_val = l_t.item()
        total = add(total, scale(l_t, lam))

    if disc is not None:
        rev_s = grl(fs, lam)
        rev_t = grl(ft, lam)
        if disc_kind == "noise":
            d_s2 = disc(rev_s, training=True, rng=dropout_rng)
            d_t2 = disc(rev_t, training=True, rng=dropout_rng)
            adv_s2, adv_t2, _ = losses.adversarial_loss(
                sigmoid(d_s2), s_idx, ys, sigmoid(d_t2), t_idx, t_acc
            )
            adv_path = add(adv_s2, adv_t2)
            if use_reg and cfg.reg_to_generator:
                adv_path = add(adv_path, losses.reg_loss(d_s2, ys))
        else:
            d_s2 = disc(rev_s, training=True, rng=dropout_rng)
            d_t2 = disc(rev_t, training=True, rng=dropout_rng)
            adv_path = add(_domain_bce(d_s2, True), _domain_bce(d_t2, False))
        total = add(total, adv_path)

    zero_grads(gen.params())
    zero_grads(clf.params())
    if disc is not None:
        zero_grads(disc.params())
    backward(total)
    opt_c.step(base_lr * cfg.head_lr_mult)
    opt_g.step(base_lr)

    return losses.objectives(
        l_adv_s_val,
        l_adv_t_val,
        l_reg_val,
        l_src_ce_val,
        l_t_val,
        lam,
        no_accepted_target=(n_acc == 0),
    )


# -- suites and exports -------------------------------------------------------------


def ablation_suite(base_cfg: RunConfig, methods, seeds):
    """Final target accuracy per method, mean +/- sample std over seeds.

    Returns a list of dict rows in the given method order.  A diverged run
    contributes NaN, which propagates into that method's statistics; the
    suite itself always completes.
    """
    methods = list(methods)
    seeds = list(seeds)
    if not methods or not seeds:
        raise ValueError("methods and seeds must be nonempty")
    rows = []
    for method in methods:
        accs = []
        for seed in seeds:
            cfg = replace(base_cfg, method=method, seed_init=seed, seed_data=seed + 9973)
            try:
                _, record = train(cfg)
                accs.append(record.final().tgt_acc)
            except TrainingDiverged:
                accs.append(float("nan"))
        arr = np.asarray(accs)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        rows.append(
            {
                "method": method,
                "mean_acc": float(arr.mean()),
                "std_acc": std,
                "seeds": ";".join(str(s) for s in seeds),
                "accs": accs,
            }
        )
    return rows


ABLATION_HEADER = "method,mean_acc,std_acc,seeds"


def ablation_csv_text(rows) -> str:
    lines = [ABLATION_HEADER]
    for r in rows:
        lines.append(f"{r['method']},{repr(r['mean_acc'])},{repr(r['std_acc'])},{r['seeds']}")
    return "\n".join(lines) + "\n"


def export_features(gen: Mlp, data: LabeledSet, path) -> None:
    """Write generator features to CSV with columns f0..f{d-1},label,domain."""
    feats = _features(gen, data.features)
    header = ",".join([f"f{i}" for i in range(feats.shape[1])] + ["label", "domain"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for row, label in zip(feats, data.labels):
            cells = [repr(float(v)) for v in row] + [str(int(label)), data.domain]
            f.write(",".join(cells) + "\n")
