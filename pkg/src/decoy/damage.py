"""Pairwise damage models.

The indicator predictor (DIP) is a binary classifier over ordered
attacker->victim feature rows. The outcome generator (DOG) is a conditional
VAE over (damage, hit group) given the same context. Both share the encoder
*architecture* but are trained separately with their own weights.

:class:`DamageLaw` is a hand-written stand-in with the same interface, used to
synthesize corpora and as an oracle substitute inside the simulator.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import N_HIT_GROUPS, AgentState, HitGroup
from .errors import ContractError, ModelError
from .nn import (Adam, GaussianLatent, Mlp, bce_with_logits, kl_gauss, load_checkpoint, minibatches,
                 reparameterize, save_checkpoint, sigmoid, softmax, softmax_cross_entropy, squared_error,
                 train_step)

WEAPONS = ("knife", "glock", "usp_s", "p250", "deagle", "mac10", "mp9", "galil", "famas",
           "ak47", "m4a4", "m4a1_s", "awp", "unknown")
DAMAGE_SCALE = 100.0
MAX_DAMAGE = 500


# --------------------------------------------------------------- features

@dataclass(frozen=True)
class FeatureSchema:
    """Vocabularies and normalization bounds; written as ``features.schema``."""

    map_ids: tuple[str, ...]
    bounds_lo: tuple[float, float, float]
    bounds_hi: tuple[float, float, float]
    weapons: tuple[str, ...] = WEAPONS

    @classmethod
    def for_level(cls, level, map_ids: Optional[Sequence[str]] = None) -> "FeatureSchema":
        b = level.bounds
        return cls(tuple(map_ids or (level.name,)), tuple(map(float, b.lo)), tuple(map(float, b.hi)))

    @property
    def agent_dim(self) -> int:
        return 3 + 2 + len(self.weapons) + 2

    @property
    def dim(self) -> int:
        return len(self.map_ids) + 2 * self.agent_dim + 3

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.subtract(self.bounds_hi, self.bounds_lo)))

    def weapon_index(self, weapon: str) -> int:
        try:
            return self.weapons.index(weapon)
        except ValueError:
            raise ContractError(f"unknown weapon {weapon!r}; vocabulary is {list(self.weapons)}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        d = json.loads(text)
        return cls(tuple(d["map_ids"]), tuple(d["bounds_lo"]), tuple(d["bounds_hi"]), tuple(d["weapons"]))


def _agent_block(s: AgentState, schema: FeatureSchema) -> list[float]:
    lo, hi = np.asarray(schema.bounds_lo), np.asarray(schema.bounds_hi)
    pos = np.clip(2.0 * (s.position - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    yaw = math.radians(s.view_angle)
    onehot = [0.0] * len(schema.weapons)
    onehot[schema.weapon_index(s.equipment.weapon)] = 1.0
    return [*pos, math.sin(yaw), math.cos(yaw), *onehot, s.equipment.armor / 100.0, float(s.equipment.helmet)]


def encode_pair(attacker: AgentState, victim: AgentState, map_id: str, schema: FeatureSchema) -> np.ndarray:
    """Feature row for the ordered pair attacker -> victim; every entry in [-1, 1]."""
    if map_id not in schema.map_ids:
        raise ContractError(f"unknown map {map_id!r}; known maps {list(schema.map_ids)}")
    mp = [0.0] * len(schema.map_ids)
    mp[schema.map_ids.index(map_id)] = 1.0
    delta = victim.position - attacker.position
    dist = float(np.linalg.norm(delta))
    rel = math.atan2(delta[1], delta[0]) - math.radians(attacker.view_angle) if dist > 0 else 0.0
    derived = [min(dist / schema.diagonal, 1.0), math.sin(rel), math.cos(rel)]
    return np.array(mp + _agent_block(attacker, schema) + _agent_block(victim, schema) + derived)


@dataclass
class PairBatch:
    attacker_ids: np.ndarray
    victim_ids: np.ndarray
    attackers: list[AgentState]
    victims: list[AgentState]
    features: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.attacker_ids)

    def subset(self, mask) -> "PairBatch":
        idx = np.flatnonzero(mask)
        return PairBatch(self.attacker_ids[idx], self.victim_ids[idx], [self.attackers[i] for i in idx],
                         [self.victims[i] for i in idx], self.features[idx], self.distances[idx])


def make_batch(pairs: Sequence[tuple[AgentState, AgentState]], map_id: str, schema: FeatureSchema) -> PairBatch:
    att = [a for a, _ in pairs]
    vic = [v for _, v in pairs]
    feats = (np.array([encode_pair(a, v, map_id, schema) for a, v in pairs]) if pairs
             else np.zeros((0, schema.dim)))
    dists = np.array([float(np.linalg.norm(v.position - a.position)) for a, v in pairs])
    return PairBatch(np.array([a.agent_id for a in att], dtype=int), np.array([v.agent_id for v in vic], dtype=int),
                     att, vic, feats, dists)


def pairwise_batch(agents: Sequence[AgentState], map_id: str, schema: FeatureSchema) -> PairBatch:
    """Every ordered cross-team pair of living agents, sorted by (attacker, victim)."""
    live = sorted((a for a in agents if a.alive), key=lambda a: a.agent_id)
    pairs = [(a, v) for a in live for v in live if a.team != v.team]
    return make_batch(pairs, map_id, schema)


# ---------------------------------------------------------------- configs

@dataclass
class DipConfig:
    encoder_hidden: tuple[int, ...] = (128, 128)
    cond_dim: int = 64
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 20


@dataclass
class DogConfig:
    encoder_hidden: tuple[int, ...] = (128, 128)
    cond_dim: int = 64
    embed_dim: int = 16
    latent_dim: int = 8
    vae_hidden: tuple[int, ...] = (128, 64)
    decoder_hidden: tuple[int, ...] = (64, 128, 128)
    lambda_d: float = 1.0
    lambda_g: float = 1.0
    lambda_kl: float = 0.1
    kl_warmup: float = 0.1
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 60
    sample_hit_group: bool = True


# -------------------------------------------------------------------- DIP

class DipModel:
    def __init__(self, encoder: Mlp, head: Mlp, threshold: float = 0.5):
        if encoder.out_dim != head.in_dim:
            raise ContractError("encoder output does not feed the head")
        self.encoder = encoder
        self.head = head
        self.threshold = threshold

    @classmethod
    def init(cls, in_dim: int, cfg: DipConfig, rng: np.random.Generator) -> "DipModel":
        enc = Mlp.init([in_dim, *cfg.encoder_hidden, cfg.cond_dim], rng, out="relu")
        head = Mlp.init([cfg.cond_dim, 1], rng)
        return cls(enc, head)

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.head.params()

    def logits(self, X) -> np.ndarray:
        return self.head(self.encoder(X))[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.logits(np.atleast_2d(X)))

    def damage_probability(self, batch: PairBatch, rng=None) -> np.ndarray:
        return self.predict_proba(batch.features) if len(batch) else np.zeros(0)

    def loss_and_grads(self, X, y):
        h, c_enc = self.encoder.forward_cache(X)
        out, c_head = self.head.forward_cache(h)
        loss, dlogit = bce_with_logits(out[:, 0], y)
        g_head, dh = self.head.backward(c_head, dlogit[:, None])
        g_enc, _ = self.encoder.backward(c_enc, dh)
        return loss, g_enc + g_head

    def save(self, path) -> None:
        arrays = {**self.encoder.to_arrays("encoder"), **self.head.to_arrays("head")}
        save_checkpoint(path, arrays, {"kind": "dip", "threshold": self.threshold,
                                       "encoder": self.encoder.activations, "head": self.head.activations,
                                       **getattr(self, "meta", {})})

    @classmethod
    def load(cls, path) -> "DipModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "dip":
            raise ModelError(f"{path} is not a DIP checkpoint")
        m = cls(Mlp.from_arrays(arrays, "encoder", meta["encoder"]), Mlp.from_arrays(arrays, "head", meta["head"]),
                meta["threshold"])
        m.meta = {k: v for k, v in meta.items() if k not in ("kind", "threshold", "encoder", "head", "version")}
        return m


def _decision_counts(scores, labels, threshold: float):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pred = scores > threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(np.mean(pred == labels)), precision, recall, f1


def binary_metrics(scores, labels, threshold: float) -> dict:
    from .metrics import average_precision, roc_auc
    accuracy, precision, recall, f1 = _decision_counts(scores, labels, threshold)
    return {"accuracy": accuracy, "f1": f1, "precision": precision, "recall": recall,
            "auc": roc_auc(scores, labels), "ap": average_precision(scores, labels), "threshold": threshold}


def f1_at(scores, labels, threshold: float) -> float:
    return _decision_counts(scores, labels, threshold)[3]


def calibrate_threshold(scores, labels) -> float:
    """Threshold maximizing F1 for the rule ``score > threshold``.

    Candidates are midpoints between consecutive distinct scores, plus one
    below the minimum. Ties go to the lowest candidate.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ContractError("calibration needs both classes")
    uniq, inv = np.unique(scores, return_inverse=True)
    pos = np.bincount(inv, weights=labels, minlength=len(uniq))
    cnt = np.bincount(inv, minlength=len(uniq))
    # candidate k predicts positive for uniq[k:]
    tp = np.cumsum(pos[::-1])[::-1]
    pp = np.cumsum(cnt[::-1])[::-1]
    total_pos = pos.sum()
    f1 = 2 * tp / (pp + total_pos)
    k = int(np.argmax(f1))
    if k == 0:
        return float(uniq[0] / 2) if uniq[0] > 0 else float(uniq[0] - 1e-6)
    return float((uniq[k - 1] + uniq[k]) / 2)


def dip_train(train, val, cfg: DipConfig = DipConfig(), seed: int = 0, log=None):
    """Fit a DIP on ``(X, y)`` pairs; returns the model and validation metrics."""
    X, y = (np.asarray(a, dtype=float) for a in train)
    Xv, yv = (np.asarray(a, dtype=float) for a in val)
    if len(np.unique(y)) < 2 or len(np.unique(yv)) < 2:
        raise ContractError("DIP training and validation data need both classes")
    rng = np.random.default_rng(seed)
    model = DipModel.init(X.shape[1], cfg, rng)
    opt = Adam(model.params(), cfg.lr)
    for epoch in range(cfg.epochs):
        losses = [train_step(model.params(), idx, lambda i: model.loss_and_grads(X[i], y[i]), opt, cfg.lr)
                  for idx in minibatches(len(X), cfg.batch_size, rng)]
        if log:
            log(f"dip epoch {epoch}: loss {np.mean(losses):.4f}")
    scores = model.predict_proba(Xv)
    model.threshold = calibrate_threshold(scores, yv)
    model.meta = {"seed": seed, "hparams": asdict(cfg)}
    return model, binary_metrics(scores, yv, model.threshold)


# -------------------------------------------------------------------- DOG

class DogModel:
    """Conditional VAE over (damage/100, hit group) given pair features."""

    def __init__(self, cond_encoder: Mlp, embed_d: Mlp, embed_g: Mlp, vae_encoder: Mlp, decoder: Mlp,
                 lambda_d: float = 1.0, lambda_g: float = 1.0, lambda_kl: float = 0.1, sample_hit_group: bool = True):
        self.latent_dim = vae_encoder.out_dim // 2
        if decoder.in_dim != self.latent_dim + cond_encoder.out_dim:
            raise ContractError("decoder input must be latent_dim + cond_dim")
        if vae_encoder.in_dim != embed_d.out_dim + embed_g.out_dim + cond_encoder.out_dim:
            raise ContractError("VAE encoder input must be the concatenated embeddings and context")
        if decoder.out_dim != 1 + N_HIT_GROUPS:
            raise ContractError("decoder must emit one damage value and one logit per hit group")
        if min(lambda_d, lambda_g, lambda_kl) <= 0:
            raise ContractError("loss weights must be positive")
        self.cond_encoder, self.embed_d, self.embed_g = cond_encoder, embed_d, embed_g
        self.vae_encoder, self.decoder = vae_encoder, decoder
        self.lambda_d, self.lambda_g, self.lambda_kl = lambda_d, lambda_g, lambda_kl
        self.sample_hit_group = sample_hit_group

    @classmethod
    def init(cls, in_dim: int, cfg: DogConfig, rng: np.random.Generator) -> "DogModel":
        c, e, dz = cfg.cond_dim, cfg.embed_dim, cfg.latent_dim
        return cls(
            Mlp.init([in_dim, *cfg.encoder_hidden, c], rng, out="relu"),
            Mlp.init([1, e], rng, out="relu"),
            Mlp.init([N_HIT_GROUPS, e], rng, out="relu"),
            Mlp.init([2 * e + c, *cfg.vae_hidden, 2 * dz], rng),
            Mlp.init([dz + c, *cfg.decoder_hidden, 1 + N_HIT_GROUPS], rng),
            cfg.lambda_d, cfg.lambda_g, cfg.lambda_kl, cfg.sample_hit_group,
        )

    @property
    def parts(self) -> list[Mlp]:
        return [self.cond_encoder, self.embed_d, self.embed_g, self.vae_encoder, self.decoder]

    def params(self) -> list[np.ndarray]:
        return [p for m in self.parts for p in m.params()]

    def posterior(self, X, d, g) -> GaussianLatent:
        return self._encode(X, d, g)[0]

    def _encode(self, X, d, g):
        h, c_h = self.cond_encoder.forward_cache(X)
        ed, c_ed = self.embed_d.forward_cache(np.asarray(d, dtype=float).reshape(-1, 1) / DAMAGE_SCALE)
        eg, c_eg = self.embed_g.forward_cache(np.eye(N_HIT_GROUPS)[np.asarray(g, dtype=int)])
        vo, c_v = self.vae_encoder.forward_cache(np.concatenate([ed, eg, h], axis=1))
        k = self.latent_dim
        return GaussianLatent(vo[:, :k], vo[:, k:]), h, (c_h, c_ed, c_eg, c_v)

    def loss_terms(self, X, d, g, eps, kl_weight: float = 1.0):
        """Forward pass; returns (total, parts, grads) with grads in params() order."""
        latent, h, (c_h, c_ed, c_eg, c_v) = self._encode(X, d, g)
        z = reparameterize(latent, eps)
        out, c_dec = self.decoder.forward_cache(np.concatenate([z, h], axis=1))
        n = len(X)
        d_target = np.asarray(d, dtype=float) / DAMAGE_SCALE
        se, d_se = squared_error(out[:, 0], d_target)
        ce, d_ce = softmax_cross_entropy(out[:, 1:], g)
        kl_rows = kl_gauss(latent)
        kl = float(kl_rows.mean())
        wkl = self.lambda_kl * kl_weight
        total = self.lambda_d * se + self.lambda_g * ce + wkl * kl

        dout = np.concatenate([self.lambda_d * d_se[:, None], self.lambda_g * d_ce], axis=1)
        g_dec, dzdec = self.decoder.backward(c_dec, dout)
        k = self.latent_dim
        dz, dh = dzdec[:, :k], dzdec[:, k:]
        sigma = np.exp(0.5 * latent.log_var)
        dmu = dz + wkl * latent.mu / n
        dlv = dz * eps * 0.5 * sigma + wkl * 0.5 * (np.exp(latent.log_var) - 1.0) / n
        g_v, dzin = self.vae_encoder.backward(c_v, np.concatenate([dmu, dlv], axis=1))
        e1 = self.embed_d.out_dim
        e2 = e1 + self.embed_g.out_dim
        g_ed, _ = self.embed_d.backward(c_ed, dzin[:, :e1])
        g_eg, _ = self.embed_g.backward(c_eg, dzin[:, e1:e2])
        g_h, _ = self.cond_encoder.backward(c_h, dh + dzin[:, e2:])
        parts = {"se": se, "ce": ce, "kl": kl}
        return total, parts, g_h + g_ed + g_eg + g_v + g_dec

    def reconstruct(self, X, d, g, rng: Optional[np.random.Generator] = None):
        """(damage HP, hit-group logits); uses the posterior mean unless ``rng`` is given."""
        latent, h, _ = self._encode(X, d, g)
        z = latent.mu if rng is None else reparameterize(latent, rng.standard_normal(latent.mu.shape))
        out = self.decoder(np.concatenate([z, h], axis=1))
        return out[:, 0] * DAMAGE_SCALE, out[:, 1:]

    def generate(self, X, rng: np.random.Generator, sample_hit_group: Optional[bool] = None):
        """Sample z from the prior and decode: integer damage in [1, 500], hit group index."""
        X = np.atleast_2d(X)
        h = self.cond_encoder(X)
        z = rng.standard_normal((len(X), self.latent_dim))
        out = self.decoder(np.concatenate([z, h], axis=1))
        damage = np.clip(np.rint(out[:, 0] * DAMAGE_SCALE), 1, MAX_DAMAGE)
        sample = self.sample_hit_group if sample_hit_group is None else sample_hit_group
        if sample:
            p = softmax(out[:, 1:])
            u = rng.random(len(X))
            groups = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), N_HIT_GROUPS - 1)
        else:
            groups = out[:, 1:].argmax(axis=1)
        return damage, groups.astype(int)

    def generate_batch(self, batch: PairBatch, rng: np.random.Generator):
        return self.generate(batch.features, rng)

    def save(self, path) -> None:
        names = ["cond_encoder", "embed_d", "embed_g", "vae_encoder", "decoder"]
        arrays = {}
        for name, m in zip(names, self.parts):
            arrays.update(m.to_arrays(name))
        meta = {"kind": "dog", "activations": {n: m.activations for n, m in zip(names, self.parts)},
                "lambda_d": self.lambda_d, "lambda_g": self.lambda_g, "lambda_kl": self.lambda_kl,
                "sample_hit_group": self.sample_hit_group, **getattr(self, "meta", {})}
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "DogModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "dog":
            raise ModelError(f"{path} is not a DOG checkpoint")
        acts = meta["activations"]
        parts = [Mlp.from_arrays(arrays, n, acts[n]) for n in ("cond_encoder", "embed_d", "embed_g", "vae_encoder", "decoder")]
        m = cls(*parts, meta["lambda_d"], meta["lambda_g"], meta["lambda_kl"], meta["sample_hit_group"])
        m.meta = {k: meta[k] for k in ("seed", "hparams") if k in meta}
        return m


def dog_reconstruct(model: DogModel, X, d, g, rng=None):
    return model.reconstruct(X, d, g, rng)


def dog_generate(model: DogModel, X, rng: np.random.Generator):
    return model.generate(X, rng)


def r2_score(pred, target) -> float:
    target = np.asarray(target, dtype=float)
    ss_res = float(np.sum((np.asarray(pred) - target) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def dog_metrics(model: DogModel, X, d, g) -> dict:
    d_hat, logits = model.reconstruct(X, d, g)
    d = np.asarray(d, dtype=float)
    latent = model.posterior(X, d, g)
    return {"mae": float(np.mean(np.abs(d_hat - d))), "r2": r2_score(d_hat, d),
            "hit_group_accuracy": float(np.mean(logits.argmax(axis=1) == np.asarray(g))),
            "kl": float(kl_gauss(latent).mean())}


def dog_train(train, val, cfg: DogConfig = DogConfig(), seed: int = 0, log=None):
    """Fit a DOG on ``(X, damage, hit_group)`` triples; returns model and validation metrics."""
    X, d, g = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=float), np.asarray(train[2], dtype=int)
    rng = np.random.default_rng(seed)
    model = DogModel.init(X.shape[1], cfg, rng)
    opt = Adam(model.params(), cfg.lr)
    steps_per_epoch = math.ceil(len(X) / cfg.batch_size)
    warm = max(1, int(cfg.kl_warmup * steps_per_epoch * cfg.epochs))
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in minibatches(len(X), cfg.batch_size, rng):
            w = min(1.0, step / warm)
            eps = rng.standard_normal((len(idx), model.latent_dim))

            def fn(i, w=w, eps=eps):
                total, _, grads = model.loss_terms(X[i], d[i], g[i], eps, w)
                return total, grads

            losses.append(train_step(model.params(), idx, fn, opt, cfg.lr))
            step += 1
        if log:
            log(f"dog epoch {epoch}: loss {np.mean(losses):.4f}")
    model.meta = {"seed": seed, "hparams": asdict(cfg)}
    return model, dog_metrics(model, *val)


def export_latents(model: DogModel, X, d, g) -> np.ndarray:
    """Rows of (posterior mean..., damage, hit group index)."""
    mu = model.posterior(X, d, g).mu
    return np.column_stack([mu, np.asarray(d, dtype=float), np.asarray(g, dtype=float)])


def save_latents(path, rows: np.ndarray) -> None:
    k = rows.shape[1] - 2
    header = ",".join([f"z{i}" for i in range(k)] + ["damage", "hit_group"])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def load_latents(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# ------------------------------------------------------- regression baseline

class RegressionBaseline:
    """Discriminative point predictor of damage from context alone."""

    def __init__(self, encoder: Mlp, head: Mlp):
        self.encoder, self.head = encoder, head

    @classmethod
    def init(cls, in_dim: int, cfg: DogConfig, rng) -> "RegressionBaseline":
        return cls(Mlp.init([in_dim, *cfg.encoder_hidden, cfg.cond_dim], rng, out="relu"),
                   Mlp.init([cfg.cond_dim, 1], rng))

    def params(self):
        return self.encoder.params() + self.head.params()

    def predict(self, X) -> np.ndarray:
        return self.head(self.encoder(X))[:, 0] * DAMAGE_SCALE

    def loss_and_grads(self, X, d):
        h, c_h = self.encoder.forward_cache(X)
        out, c_o = self.head.forward_cache(h)
        loss, dout = squared_error(out[:, 0], np.asarray(d, dtype=float) / DAMAGE_SCALE)
        g_o, dh = self.head.backward(c_o, dout[:, None])
        g_h, _ = self.encoder.backward(c_h, dh)
        return loss, g_h + g_o


def train_regression_baseline(train, cfg: DogConfig = DogConfig(), seed: int = 0) -> RegressionBaseline:
    X, d = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=float)
    rng = np.random.default_rng(seed)
    model = RegressionBaseline.init(X.shape[1], cfg, rng)
    opt = Adam(model.params(), cfg.lr)
    for _ in range(cfg.epochs):
        for idx in minibatches(len(X), cfg.batch_size, rng):
            train_step(model.params(), idx, lambda i: model.loss_and_grads(X[i], d[i]), opt, cfg.lr)
    return model


# ------------------------------------------------------------- damage law

@dataclass(frozen=True)
class DamageLaw:
    """Ground-truth engagement rule with the DIP/DOG interfaces.

    Damage happens within ``engage_range`` (with probability ``hit_prob``).
    The hit group is Head inside ``head_range`` and Leg outside it when
    ``head_range`` is set, otherwise it is drawn from ``hit_group_probs``.
    Damage is uniform on the integer range of its hit group.
    """

    engage_range: float = 15.0
    hit_prob: float = 1.0
    head_range: Optional[float] = None
    hit_group_probs: tuple[float, ...] = (0.5, 0.0, 0.0, 0.0, 0.0, 0.5)
    damage_ranges: tuple[tuple[int, int], ...] = ((90, 110), (40, 60), (25, 35), (25, 35), (15, 25), (10, 30))

    def damage_probability(self, batch: PairBatch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        hit = batch.distances < self.engage_range
        if self.hit_prob < 1.0:
            hit &= rng.random(len(batch)) < self.hit_prob
        return hit.astype(float)

    def hit_groups(self, distances, rng) -> np.ndarray:
        distances = np.asarray(distances, dtype=float)
        if self.head_range is not None:
            return np.where(distances < self.head_range, int(HitGroup.Head), int(HitGroup.Leg))
        p = np.asarray(self.hit_group_probs, dtype=float)
        return rng.choice(N_HIT_GROUPS, size=len(distances), p=p / p.sum())

    def damages(self, groups, rng) -> np.ndarray:
        lo = np.array([self.damage_ranges[g][0] for g in groups])
        hi = np.array([self.damage_ranges[g][1] for g in groups])
        return (lo + np.floor(rng.random(len(groups)) * (hi - lo + 1))).astype(float) if len(groups) else np.zeros(0)

    def generate_batch(self, batch: PairBatch, rng: np.random.Generator):
        g = self.hit_groups(batch.distances, rng)
        return self.damages(g, rng), g

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DamageLaw":
        return cls(d["engage_range"], d["hit_prob"], d["head_range"], tuple(d["hit_group_probs"]),
                   tuple(tuple(r) for r in d["damage_ranges"]))


@dataclass
class ModelBundle:
    """What the simulator needs to resolve damage."""

    dip: object
    dog: object
    threshold: float
    schema: FeatureSchema

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        schema = FeatureSchema.from_json((directory / "features.schema").read_text())
        law_path = directory / "law.json"
        if law_path.exists():
            law = DamageLaw.from_dict(json.loads(law_path.read_text()))
            return cls(law, law, 0.5, schema)
        try:
            dip = DipModel.load(directory / "dip.model")
            dog = DogModel.load(directory / "dog.model")
            threshold = float((directory / "threshold.txt").read_text().strip())
        except (OSError, ValueError) as exc:
            raise ModelError(f"cannot load models from {directory}: {exc}") from exc
        return cls(dip, dog, threshold, schema)

    @classmethod
    def from_law(cls, law: DamageLaw, schema: FeatureSchema) -> "ModelBundle":
        return cls(law, law, 0.5, schema)
