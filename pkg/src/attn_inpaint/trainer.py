"""WGAN-GP training loop: critic updates interleaved with generator updates."""

import csv
import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint as ckpt_io
from .attention import AttentionConfig
from .losses import (GpConfig, build_discount_mask, critic_loss, discounted_l1, eval_metrics,
                     generator_adv_loss, gradient_penalty)
from .masking import (batch_masks, complete, crop_outer, make_rng, rng_from_array,
                      rng_state_to_array, sample_mask_pair)
from .model import ArchSpec, DivergenceError, build_critics, build_generator, load_parameters
from .tensor import Tensor, grad, no_grad

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "l1_coarse", "l1_refine", "adv_g", "adv_l", "gp_g", "gp_l")


@dataclass
class TrainConfig:
    image_size: int = 64
    hole_h: int = 32
    hole_w: int = 32
    batch_size: int = 4
    critic_steps: int = 5
    steps: int = 200
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    w_coarse_l1: float = 1.0
    w_refine_l1: float = 1.0
    w_adv_global: float = 1e-3
    w_adv_local: float = 1e-3
    gamma: float = 0.99
    lambda_gp: float = 10.0
    seed: int = 0
    ckpt_every: int = 50
    sample_every: int = 50

    def validate(self):
        for name in ("w_coarse_l1", "w_refine_l1", "w_adv_global", "w_adv_local"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if not (0 < self.hole_h <= self.image_size and 0 < self.hole_w <= self.image_size):
            raise ValueError("hole does not fit the image")
        return self


# ------------------------------------------------------------------- optimizer
def adam_update(params, grads, state, step_size, beta1, beta2, eps):
    """In-place Adam step with bias correction.

    ``state`` holds ``t`` and per-name first/second moments ``m``/``v``.
    """
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: grad dims {g.shape} != {p.data.shape}")
        g = g.astype(p.data.dtype, copy=False)
        mi = m.get(name)
        if mi is None:
            mi = m[name] = np.zeros_like(p.data)
            v[name] = np.zeros_like(p.data)
        vi = v[name]
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.data = p.data - step_size * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {"t": 0, "m": {}, "v": {}}

    def step(self, grads):
        adam_update(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def entries(self, prefix):
        out = OrderedDict()
        out[f"{prefix}.t"] = np.array([self.state["t"]], dtype=np.float64)
        for name in self.params:
            if name in self.state["m"]:
                out[f"{prefix}.m.{name}"] = self.state["m"][name]
                out[f"{prefix}.v.{name}"] = self.state["v"][name]
        return out

    def restore(self, entries, prefix):
        self.state = {"t": int(entries[f"{prefix}.t"][0]), "m": {}, "v": {}}
        for name, p in self.params.items():
            key = f"{prefix}.m.{name}"
            if key in entries:
                self.state["m"][name] = entries[key].astype(p.dtype)
                self.state["v"][name] = entries[f"{prefix}.v.{name}"].astype(p.dtype)


# ---------------------------------------------------------------------- state
@dataclass
class Models:
    spec: ArchSpec
    cfg: TrainConfig
    gen: object
    dg: object
    dl: object
    opt_g: Adam
    opt_dg: Adam
    opt_dl: Adam
    rng: np.random.Generator
    step: int = 0
    critic_updates: int = 0
    history: list = field(default_factory=list)


def build_models(spec, cfg):
    cfg.validate()
    if spec.local_size != cfg.hole_h or cfg.hole_h != cfg.hole_w:
        raise ValueError("local critic size must equal the (square) outer hole box")
    gen = build_generator(spec, seed=cfg.seed)
    dg, dl = build_critics(spec, seed=cfg.seed)

    def opt(m):
        return Adam(m.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    return Models(spec, cfg, gen, dg, dl, opt(gen), opt(dg), opt(dl), make_rng(cfg.seed))


def _check(record):
    for k, v in record.items():
        if not np.isfinite(v):
            raise DivergenceError(f"{k} is not finite ({v})")
    return record


def _sample_batch(rng, data, cfg):
    idx = rng.integers(0, len(data), size=cfg.batch_size)
    x = np.asarray(data)[idx]
    H, W = x.shape[-2:]
    pairs = [sample_mask_pair(rng, H, W, cfg.hole_h, cfg.hole_w) for _ in range(cfg.batch_size)]
    return x, pairs


def _grads(loss, params):
    gs = grad(loss, list(params.values()))
    return OrderedDict((k, g.data) for k, g in zip(params, gs))


def complete_batch(gen, x, m):
    """x_tilde = z + G(z, m) * (1 - m) with the generator held constant."""
    z = x * m
    with no_grad():
        coarse, refined, scores = gen(z, m)
    return complete(z, refined.data, m), coarse.data, scores


def critic_step(x, pairs, models, cfg):
    """One update of each critic on real x vs completed x_tilde."""
    m = batch_masks(pairs, x.dtype)
    x_tilde, _, _ = complete_batch(models.gen, x, m)
    gp_cfg = GpConfig(cfg.lambda_gp)
    rec = {}
    for tag, critic, opt, real, fake, mk in (
        ("global", models.dg, models.opt_dg, x, x_tilde, m),
        ("local", models.dl, models.opt_dl, crop_outer(x, pairs), crop_outer(x_tilde, pairs),
         crop_outer(m, pairs)),
    ):
        loss = critic_loss(critic(Tensor(real)), critic(Tensor(fake)))
        gp = gradient_penalty(critic, real, fake, mk, gp_cfg, rng=models.rng)
        total = loss + gp
        rec[f"critic_loss_{tag}"] = float(loss.data)
        rec[f"gp_{tag}"] = float(gp.data)
        _check(rec)
        opt.step(_grads(total, critic.parameters()))
    models.critic_updates += 1
    return rec


def discount_weights(pairs, gamma, image_shape):
    return np.concatenate([build_discount_mask(p.inner_bbox, gamma, image_shape).weights for p in pairs])


def generator_losses(x, pairs, models, cfg):
    m = batch_masks(pairs, x.dtype)
    z = x * m
    coarse, refined, _ = models.gen(z, m)
    M = discount_weights(pairs, cfg.gamma, x.shape[-2:])
    target = Tensor(x)
    l1c = discounted_l1(coarse, target, M)
    l1r = discounted_l1(refined, target, M)
    x_tilde = complete(Tensor(z), refined, m)
    adv_g = generator_adv_loss(models.dg(x_tilde))
    adv_l = generator_adv_loss(models.dl(crop_outer(x_tilde, pairs)))
    terms = {"l1_coarse": l1c, "l1_refine": l1r, "adv_global": adv_g, "adv_local": adv_l}
    total = (l1c * cfg.w_coarse_l1 + l1r * cfg.w_refine_l1
             + adv_g * cfg.w_adv_global + adv_l * cfg.w_adv_local)
    return total, terms


def generator_step(x, pairs, models, cfg):
    total, terms = generator_losses(x, pairs, models, cfg)
    rec = {k: float(v.data) for k, v in terms.items()}
    rec["total"] = float(total.data)
    _check(rec)
    models.opt_g.step(_grads(total, models.gen.parameters()))
    return rec


def train_iteration(models, data):
    """critic_steps critic updates, then one generator update."""
    cfg = models.cfg
    crit = []
    for _ in range(cfg.critic_steps):
        x, pairs = _sample_batch(models.rng, data, cfg)
        crit.append(critic_step(x, pairs, models, cfg))
    x, pairs = _sample_batch(models.rng, data, cfg)
    rec = generator_step(x, pairs, models, cfg)
    models.step += 1
    row = {"step": models.step, "l1_coarse": rec["l1_coarse"], "l1_refine": rec["l1_refine"],
           "adv_g": rec["adv_global"], "adv_l": rec["adv_local"],
           "gp_g": crit[-1]["gp_global"], "gp_l": crit[-1]["gp_local"]}
    models.history.append(row)
    return row


def train(models, data, steps=None, run_dir=None, sample_batch=None):
    """Run generator steps until ``steps`` (default cfg.steps) total are done.

    With ``run_dir`` set, appends rows to metrics.csv and writes checkpoints
    and sample grids on cadence. On divergence the last checkpoint on disk is
    left untouched and the error propagates.
    """
    cfg = models.cfg
    target = cfg.steps if steps is None else steps
    data = np.asarray(data)
    if len(data) == 0:
        raise ValueError("empty dataset")
    writer = fh = None
    if run_dir:
        os.makedirs(os.path.join(run_dir, "samples"), exist_ok=True)
        path = os.path.join(run_dir, "metrics.csv")
        fresh = not os.path.exists(path) or models.step == 0
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRIC_COLUMNS)
    try:
        while models.step < target:
            row = train_iteration(models, data)
            log.info("step %d l1_refine=%.4f gp_g=%.3f", row["step"], row["l1_refine"], row["gp_g"])
            if writer:
                writer.writerow([row["step"]] + [repr(row[c]) for c in METRIC_COLUMNS[1:]])
                fh.flush()
                if cfg.ckpt_every and models.step % cfg.ckpt_every == 0:
                    save_state(os.path.join(run_dir, f"ckpt_{models.step}.cain"), models)
                if cfg.sample_every and models.step % cfg.sample_every == 0:
                    _write_samples(run_dir, models, data if sample_batch is None else sample_batch)
    finally:
        if fh:
            fh.close()
    return models


def _write_samples(run_dir, models, data):
    from .imageio import grid, write_rgb

    x = np.asarray(data[:4])
    rng = make_rng(models.cfg.seed + 7)
    H, W = x.shape[-2:]
    pairs = [sample_mask_pair(rng, H, W, models.cfg.hole_h, models.cfg.hole_w) for _ in range(len(x))]
    m = batch_masks(pairs, x.dtype)
    x_tilde, _, _ = complete_batch(models.gen, x, m)
    rows = np.concatenate([x * m, x_tilde, x])
    write_rgb(os.path.join(run_dir, "samples", f"step_{models.step}.png"), grid(rows, cols=len(x)))


# ---------------------------------------------------------------- checkpoints
def _text_entry(s):
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _entry_text(a):
    return bytes(np.asarray(a, dtype=np.uint8)).decode("utf-8")


def spec_to_dict(spec):
    return asdict(spec)


def spec_from_dict(d):
    d = dict(d)
    d["attention"] = AttentionConfig(**d["attention"])
    return ArchSpec(**d)


def state_entries(models):
    e = OrderedDict()
    e["meta.step"] = np.array([models.step], dtype=np.float64)
    e["meta.critic_updates"] = np.array([models.critic_updates], dtype=np.float64)
    e["meta.arch"] = _text_entry(json.dumps(spec_to_dict(models.spec), sort_keys=True))
    e["meta.train"] = _text_entry(json.dumps(asdict(models.cfg), sort_keys=True))
    e["rng.pcg64"] = rng_state_to_array(models.rng)
    for prefix, net in (("gen", models.gen), ("dg", models.dg), ("dl", models.dl)):
        for name, p in net.parameters().items():
            e[f"{prefix}.{name}"] = p.data
    e.update(models.opt_g.entries("opt_g"))
    e.update(models.opt_dg.entries("opt_dg"))
    e.update(models.opt_dl.entries("opt_dl"))
    return e


def save_state(path, models):
    return ckpt_io.save(path, state_entries(models))


def _sub(entries, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in entries.items() if k.startswith(prefix + ".")}


def load_state(path):
    """Rebuild models, optimizer moments, rng and counters from a checkpoint."""
    e = ckpt_io.load(path)
    spec = spec_from_dict(json.loads(_entry_text(e["meta.arch"])))
    cfg = TrainConfig(**json.loads(_entry_text(e["meta.train"])))
    models = build_models(spec, cfg)
    load_parameters(models.gen, _sub(e, "gen"))
    load_parameters(models.dg, _sub(e, "dg"))
    load_parameters(models.dl, _sub(e, "dl"))
    models.opt_g.restore(e, "opt_g")
    models.opt_dg.restore(e, "opt_dg")
    models.opt_dl.restore(e, "opt_dl")
    models.rng = rng_from_array(e["rng.pcg64"])
    models.step = int(e["meta.step"][0])
    models.critic_updates = int(e["meta.critic_updates"][0])
    return models


def load_generator(path):
    e = ckpt_io.load(path)
    spec = spec_from_dict(json.loads(_entry_text(e["meta.arch"])))
    gen = build_generator(spec)
    load_parameters(gen, _sub(e, "gen"))
    return gen


# ----------------------------------------------------------------- evaluation
def eval_pairs(n, H, W, hole_h, hole_w, seed):
    rng = make_rng(seed)
    return [sample_mask_pair(rng, H, W, hole_h, hole_w) for _ in range(n)]


def _complete_all(gen, data, pairs, batch=8):
    out = []
    for i in range(0, len(data), batch):
        x = data[i:i + batch]
        m = batch_masks(pairs[i:i + batch], x.dtype)
        out.append(complete_batch(gen, x, m)[0])
    return np.concatenate(out)


def evaluate(gen, data, hole_h, hole_w, seed=0, identity=False):
    """Mean l1_pct, l2_pct, psnr, tv over a set with seeded holes.

    ``identity`` scores the ground truth against itself (sanity mode).
    """
    data = np.asarray(data)
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    H, W = data.shape[-2:]
    pairs = eval_pairs(len(data), H, W, hole_h, hole_w, seed)
    pred = data.copy() if identity else _complete_all(gen, data, pairs)
    rows = [eval_metrics(data[i], pred[i]) for i in range(len(data))]
    return OrderedDict((k, float(np.mean([r[k] for r in rows]))) for k in ("l1_pct", "l2_pct", "psnr", "tv"))


def heldout_discounted_l1(gen, data, hole_h, hole_w, gamma=0.99, seed=0):
    """Discounted l1 of the refined output over a held-out set with seeded holes."""
    data = np.asarray(data)
    H, W = data.shape[-2:]
    pairs = eval_pairs(len(data), H, W, hole_h, hole_w, seed)
    m = batch_masks(pairs, data.dtype)
    with no_grad():
        _, refined, _ = gen(data * m, m)
    M = discount_weights(pairs, gamma, (H, W))
    return float(discounted_l1(refined, Tensor(data), M).data)
