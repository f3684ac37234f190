"""Semantic rate-distortion loss and the two-step iterative trainer.

The loss (per batch, natural log):

    total = rate_y + rate_z + w0 * alpha * ||x - xhat||^2 + w1 * CE

with w0 = 1/(1 + lambda1), w1 = lambda1/(1 + lambda1). Rates are summed
over elements and averaged over the batch; the squared error is summed
over [0,1]-scaled pixels (the Gaussian-likelihood form of the image
distortion) and the cross entropy is batch-averaged. Optimization runs
in nats; logs report rates in bits.

Step 1 trains the codec and density parameters with the classifier
frozen (its cross entropy still scores reconstructions); step 2 trains
the classifier alone on reconstructions from the frozen codec.
"""

import csv
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Tensor
from .entropy import gaussian_pmf_graph
from .optim import make_optimizer
from .quantization import NoiseRng, noise_proxy, quantize

LN2 = float(np.log(2.0))

LOG_COLUMNS = ["iteration", "step", "epoch", "rate_y_bits", "rate_z_bits",
               "mse", "cross_entropy", "total", "wall_seconds"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    alpha: float = 0.3
    b1: int = 64
    b2_hat: int = 64
    bn: int = 1
    n1: int = 5
    n2: int = 5
    iterations: int = 3
    lr_codec: float = 1e-4
    lr_classifier: float = 0.02
    optimizer_codec: str = "adam"
    optimizer_classifier: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.alpha <= 0:
            raise ValueError("need lambda1 >= 0 and alpha > 0")
        for name in ("b1", "b2_hat", "bn", "n1", "n2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def w0(self):
        return 1.0 / (1.0 + self.lambda1)

    @property
    def w1(self):
        return self.lambda1 / (1.0 + self.lambda1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LossParts:
    rate_y: float                # nats per image
    rate_z: float
    distortion_image: float      # alpha-weighted squared error, nats
    distortion_semantic: float   # cross entropy, nats
    total: float
    mse: float                   # plain mean squared error on [0,1] pixels

    @property
    def rate_y_bits(self):
        return self.rate_y / LN2

    @property
    def rate_z_bits(self):
        return self.rate_z / LN2


def compute_loss(model, images, labels, cfg, rng, return_aux=False):
    """Forward the noise-proxy training path and assemble the loss.

    `images` are uint8/float [0,255] arrays (B, H, W, 3); both latents
    use additive uniform noise; rates are evaluated in float64.
    """
    if len(images) == 0:
        raise ValueError("empty batch")
    batch = len(images)
    x = Tensor(np.asarray(images, dtype=np.float32) / 255.0)
    labels = np.asarray(labels, dtype=np.int64)

    y = model.analyze_norm(x)
    z = model.hyper_analyze_t(y)

    rate_y_t = None
    rate_z_t = None
    d0_t = None
    d1_t = None
    aux = None
    for _ in range(cfg.bn):
        y_tilde = noise_proxy(y, rng)
        z_tilde = noise_proxy(z, rng)
        sigma = model.hyper_synthesize_t(z_tilde)

        p_y = gaussian_pmf_graph(y_tilde, sigma)
        r_y = ad.sum_(-ad.log(p_y)) / batch

        z_ch = ad.reshape(ad.transpose(z_tilde, (3, 0, 1, 2)),
                          (model.config.z_channels, -1))
        p_z = model.density.pmf_graph(z_ch)
        r_z = ad.sum_(-ad.log(p_z)) / batch

        x_hat = model.synthesize_norm(y_tilde)
        sq_err = ad.sum_(ad.square(x - x_hat)) / batch
        d0 = ad.cast(sq_err, np.float64) * cfg.alpha

        logits = model.classifier_logits(x_hat)
        d1 = ad.cast(ad.mean(ad.softmax_cross_entropy(logits, labels)), np.float64)

        rate_y_t = r_y if rate_y_t is None else rate_y_t + r_y
        rate_z_t = r_z if rate_z_t is None else rate_z_t + r_z
        d0_t = d0 if d0_t is None else d0_t + d0
        d1_t = d1 if d1_t is None else d1_t + d1
        if aux is None:
            aux = {"y_tilde": y_tilde.data, "z_tilde": z_tilde.data,
                   "sigma": sigma.data,
                   "mse": float(sq_err.data) / (model.config.source_dim)}

    scale = 1.0 / cfg.bn
    rate_y_t = rate_y_t * scale
    rate_z_t = rate_z_t * scale
    d0_t = d0_t * scale
    d1_t = d1_t * scale
    total = rate_y_t + rate_z_t + cfg.w0 * d0_t + cfg.w1 * d1_t

    parts = LossParts(
        rate_y=float(rate_y_t.data), rate_z=float(rate_z_t.data),
        distortion_image=float(d0_t.data), distortion_semantic=float(d1_t.data),
        total=float(total.data), mse=aux["mse"])
    if not np.isfinite(parts.total):
        raise TrainingDiverged(f"non-finite loss: {parts}")
    if return_aux:
        return total, parts, aux
    return total, parts


def classifier_loss(model, recon_norm, labels):
    """Step-2 objective: cross entropy of the classifier on frozen-codec
    reconstructions."""
    logits = model.classifier_logits(recon_norm)
    return ad.mean(ad.softmax_cross_entropy(logits, np.asarray(labels, dtype=np.int64)))


def _epoch_rng(cfg, iteration, step_id, epoch):
    seq = np.random.SeedSequence([cfg.seed, iteration, step_id, epoch])
    shuffle_seq, noise_seq = seq.spawn(2)
    shuffler = np.random.Generator(np.random.Philox(shuffle_seq))
    return shuffler, NoiseRng(cfg.seed, _seq=noise_seq)


def _frozen_grad_check(named_params):
    for name, p in named_params:
        if not p.requires_grad and p.grad is not None:
            raise AssertionError(f"gradient appeared on frozen parameter {name}")


def step1_epoch(model, images, labels, cfg, opt, iteration, epoch):
    """One epoch over the data updating codec + density, classifier frozen."""
    shuffler, noise = _epoch_rng(cfg, iteration, 1, epoch)
    order = shuffler.permutation(len(images))
    sums = np.zeros(5)
    n_batches = 0
    for start in range(0, len(order) - cfg.b1 + 1, cfg.b1):
        idx = order[start:start + cfg.b1]
        total, parts = compute_loss(model, images[idx], labels[idx], cfg, noise)
        total.backward()
        _frozen_grad_check(model.classifier_parameters())
        opt.step()
        model.zero_grad()
        sums += [parts.rate_y_bits, parts.rate_z_bits, parts.mse,
                 parts.distortion_semantic, parts.total]
        n_batches += 1
    return sums / max(n_batches, 1)


def step2_epoch(model, images, labels, cfg, opt, iteration, epoch):
    """One epoch updating the classifier on fresh frozen-codec
    reconstructions."""
    shuffler, noise = _epoch_rng(cfg, iteration, 2, epoch)
    order = shuffler.permutation(len(images))
    ce_sum = 0.0
    n_batches = 0
    for start in range(0, len(order) - cfg.b2_hat + 1, cfg.b2_hat):
        idx = order[start:start + cfg.b2_hat]
        x = Tensor(np.asarray(images[idx], dtype=np.float32) / 255.0)
        loss = None
        for _ in range(cfg.bn):
            y_tilde = noise_proxy(model.analyze_norm(x), noise)
            recon = model.synthesize_norm(y_tilde)
            term = classifier_loss(model, recon, labels[idx])
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / cfg.bn)
        if not np.isfinite(float(loss.data)):
            raise TrainingDiverged("non-finite classifier loss")
        loss.backward()
        _frozen_grad_check(model.codec_parameters())
        opt.step()
        model.zero_grad()
        ce_sum += float(loss.data)
        n_batches += 1
    return ce_sum / max(n_batches, 1)


def _set_trainable(named_params, flag):
    for _, p in named_params:
        p.requires_grad = flag


def iterate(model, images, labels, cfg, out_dir=None, resume_from=None,
            log_hook=None):
    """Alternate step 1 (N1 epochs) and step 2 (N2 epochs) for the
    configured number of iterations, checkpointing after each iteration.

    Returns the list of per-epoch log rows (dicts in LOG_COLUMNS order).
    """
    opt_codec = make_optimizer(cfg.optimizer_codec, model.codec_parameters(),
                               cfg.lr_codec)
    opt_cls = make_optimizer(cfg.optimizer_classifier,
                             model.classifier_parameters(), cfg.lr_classifier)
    start_iteration = 0
    if resume_from is not None:
        start_iteration = load_training_state(model, opt_codec, opt_cls, resume_from)

    rows = []
    last_good = resume_from
    for it in range(start_iteration, cfg.iterations):
        try:
            _set_trainable(model.codec_parameters(), True)
            _set_trainable(model.classifier_parameters(), False)
            for epoch in range(cfg.n1):
                t0 = time.time()
                ry, rz, mse, ce, tot = step1_epoch(model, images, labels, cfg,
                                                   opt_codec, it, epoch)
                rows.append(_row(it, 1, epoch, ry, rz, mse, ce, tot, time.time() - t0))
                if log_hook:
                    log_hook(rows[-1])

            _set_trainable(model.codec_parameters(), False)
            _set_trainable(model.classifier_parameters(), True)
            for epoch in range(cfg.n2):
                t0 = time.time()
                ce = step2_epoch(model, images, labels, cfg, opt_cls, it, epoch)
                rows.append(_row(it, 2, epoch, float("nan"), float("nan"),
                                 float("nan"), ce, ce, time.time() - t0))
                if log_hook:
                    log_hook(rows[-1])
        except TrainingDiverged as exc:
            raise TrainingDiverged(
                f"{exc} (last good checkpoint: {last_good})") from exc
        finally:
            _set_trainable(model.codec_parameters(), True)
            _set_trainable(model.classifier_parameters(), True)

        if out_dir is not None:
            last_good = save_training_state(model, opt_codec, opt_cls,
                                            out_dir, it + 1)
    if out_dir is not None:
        write_log_csv(os.path.join(out_dir, "training_log.csv"), rows)
    return rows


def end_to_end(model, images, labels, cfg, epochs=None, out_dir=None):
    """Baseline single-loop trainer: all parameters update every batch
    (B2 = B1), the overfitting-prone comparison for the two-step scheme."""
    opt_codec = make_optimizer(cfg.optimizer_codec, model.codec_parameters(),
                               cfg.lr_codec)
    opt_cls = make_optimizer(cfg.optimizer_classifier,
                             model.classifier_parameters(), cfg.lr_classifier)
    epochs = epochs if epochs is not None else cfg.iterations * (cfg.n1 + cfg.n2)
    rows = []
    for epoch in range(epochs):
        t0 = time.time()
        shuffler, noise = _epoch_rng(cfg, 0, 3, epoch)
        order = shuffler.permutation(len(images))
        sums = np.zeros(5)
        n_batches = 0
        for start in range(0, len(order) - cfg.b1 + 1, cfg.b1):
            idx = order[start:start + cfg.b1]
            total, parts = compute_loss(model, images[idx], labels[idx], cfg, noise)
            total.backward()
            opt_codec.step()
            opt_cls.step()
            model.zero_grad()
            sums += [parts.rate_y_bits, parts.rate_z_bits, parts.mse,
                     parts.distortion_semantic, parts.total]
            n_batches += 1
        ry, rz, mse, ce, tot = sums / max(n_batches, 1)
        rows.append(_row(0, 0, epoch, ry, rz, mse, ce, tot, time.time() - t0))
    if out_dir is not None:
        write_log_csv(os.path.join(out_dir, "training_log.csv"), rows)
    return rows


def _row(iteration, step, epoch, ry, rz, mse, ce, total, wall):
    return {"iteration": iteration, "step": step, "epoch": epoch,
            "rate_y_bits": ry, "rate_z_bits": rz, "mse": mse,
            "cross_entropy": ce, "total": total, "wall_seconds": wall}


def write_log_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow([r["iteration"], r["step"], r["epoch"]]
                            + [f"{r[c]:.6f}" for c in LOG_COLUMNS[3:8]]
                            + [f"{r['wall_seconds']:.3f}"])


def save_training_state(model, opt_codec, opt_cls, out_dir, iteration):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"iter_{iteration:03d}.dsckpt")
    ckpt.save_model(path, model)
    state = {"meta.iteration": np.array([iteration], dtype=np.float32)}
    for prefix, opt in (("codec", opt_codec), ("cls", opt_cls)):
        for name, arr in opt.state_arrays().items():
            state[f"{prefix}.{name}"] = arr
    ckpt.save_arrays(path + ".opt", state)
    return path


def load_training_state(model, opt_codec, opt_cls, path):
    ckpt.load_model(path, model)
    state = ckpt.load_arrays(path + ".opt")
    iteration = int(state.pop("meta.iteration")[0])
    for prefix, opt in (("codec", opt_codec), ("cls", opt_cls)):
        sub = {k[len(prefix) + 1:]: v for k, v in state.items()
               if k.startswith(prefix + ".")}
        if sub:
            opt.load_state_arrays(sub)
    return iteration


def evaluate_accuracy(model, images, labels, batch=128):
    """Top-1/top-5 accuracy through the deterministic quantized pipeline
    (round latents, rebuild scales from the rounded side info)."""
    hits1 = 0
    hits5 = 0
    n = len(images)
    for start in range(0, n, batch):
        chunk = np.asarray(images[start:start + batch], dtype=np.float32)
        y = model.analyze(chunk)
        y_q = quantize(y).astype(np.float32)
        x_hat = model.synthesize(y_q)
        probs = model.classify(x_hat)
        top1 = np.argmax(probs, axis=1)
        order = np.argsort(-probs, axis=1, kind="stable")[:, :5]
        lab = np.asarray(labels[start:start + batch])
        hits1 += int(np.sum(top1 == lab))
        hits5 += int(np.sum(order == lab[:, None]))
    return hits1 / n, hits5 / n
