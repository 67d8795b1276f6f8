"""Attention-based one-step deformation model and a Broyden Jacobian baseline.

Shapes:
  s  (B, n, 2) keypoints,  y (B, 2, 3) gripper poses,  a (B, 2, 3) gripper motions,
  ds (B, n, 2) predicted keypoint displacement.

The DLO encoder runs self-attention over keypoint tokens, the robot encoder
over the two gripper-pose tokens.  Each decoder layer lets keypoint tokens
(queries) attend to encoded gripper poses (keys) and read embedded gripper
motions (values).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dloplan import dlo_sim
from dloplan.autodiff import Tensor, concat, layer_norm, no_grad, tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GROUPS = ("encoder", "robot_encoder", "decoder", "output_head")


@dataclass(frozen=True)
class ModelArch:
    embed_dim: int = 64
    num_heads: int = 4
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    feedforward_dim: int = 128
    num_keypoints: int = 13

    def __post_init__(self):
        for name in ("embed_dim", "num_heads", "num_encoder_layers", "num_decoder_layers", "feedforward_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")


@dataclass
class NormStats:
    """Per-feature mean/scale for keypoint, gripper, motion inputs and the output."""

    kp_mean: np.ndarray
    kp_scale: np.ndarray
    eef_mean: np.ndarray
    eef_scale: np.ndarray
    act_scale: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(4), np.ones(4), np.zeros(5), np.ones(5), np.ones(3), np.ones(2))

    def to_dict(self):
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def normalize(x, mean, scale):
    return (x - mean) / scale


def denormalize(x, mean, scale):
    return x * scale + mean


@dataclass
class DeformationModelParams:
    arch: ModelArch
    weights: dict              # name -> ndarray, names prefixed by group
    stats: NormStats = field(default_factory=NormStats.identity)

    def names(self, group=None):
        return [k for k in self.weights if group is None or k.split(".")[0] == group]

    def flat(self, group) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in self.names(group)])

    def copy(self):
        return DeformationModelParams(self.arch, {k: v.copy() for k, v in self.weights.items()},
                                      NormStats(**{k: np.copy(v) for k, v in asdict(self.stats).items()}))

    @property
    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.weights.values()))


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------

def _attn_shapes(prefix, d, kv_dim=None, v_bias=True):
    kv = kv_dim or d
    out = {f"{prefix}.wq": (d, d), f"{prefix}.bq": (d,), f"{prefix}.wk": (kv, d), f"{prefix}.bk": (d,),
           f"{prefix}.wv": (kv, d), f"{prefix}.wo": (d, d), f"{prefix}.bo": (d,)}
    if v_bias:
        out[f"{prefix}.bv"] = (d,)
    return out


def _block_shapes(prefix, d, f):
    return {f"{prefix}.ln1.g": (d,), f"{prefix}.ln1.b": (d,), **_attn_shapes(f"{prefix}.attn", d),
            f"{prefix}.ln2.g": (d,), f"{prefix}.ln2.b": (d,),
            f"{prefix}.ff.w1": (d, f), f"{prefix}.ff.b1": (f,), f"{prefix}.ff.w2": (f, d), f"{prefix}.ff.b2": (d,)}


def param_shapes(arch: ModelArch) -> dict:
    d, f = arch.embed_dim, arch.feedforward_dim
    shapes = {"encoder.embed.w": (4, d), "encoder.embed.b": (d,)}
    for i in range(arch.num_encoder_layers):
        shapes.update(_block_shapes(f"encoder.l{i}", d, f))
    shapes.update({"encoder.lnf.g": (d,), "encoder.lnf.b": (d,)})
    shapes.update({"robot_encoder.embed.w": (5, d), "robot_encoder.embed.b": (d,)})
    for i in range(arch.num_encoder_layers):
        shapes.update(_block_shapes(f"robot_encoder.l{i}", d, f))
    shapes.update({"robot_encoder.lnf.g": (d,), "robot_encoder.lnf.b": (d,)})
    shapes["decoder.motion.w"] = (3, d)
    for i in range(arch.num_decoder_layers):
        p = f"decoder.l{i}"
        shapes.update(_block_shapes(p, d, f))
        shapes.update({f"{p}.lnx.g": (d,), f"{p}.lnx.b": (d,)})
        shapes.update(_attn_shapes(f"{p}.xattn", d, v_bias=False))
    shapes.update({"decoder.lnf.g": (d,), "decoder.lnf.b": (d,), "output_head.w": (d, 2), "output_head.b": (2,)})
    return shapes


def init_params(arch: ModelArch, seed: int = 0) -> DeformationModelParams:
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(arch).items():
        leaf = name.split(".")[-1]
        if leaf == "g":
            weights[name] = np.ones(shape)
        elif leaf.startswith("b"):
            weights[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            weights[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
    weights["output_head.w"] *= 0.1
    return DeformationModelParams(arch, weights)


def positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None]
    ang = pos / (10000.0 ** (2 * i / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : (d - d // 2)])
    return pe


# --------------------------------------------------------------------------
# forward graph
# --------------------------------------------------------------------------

def _mha(w, p, xq, xk, xv, heads, last_attn=None):
    b, tq, d = xq.shape
    tk = xk.shape[1]
    dh = d // heads
    q = xq @ w[f"{p}.wq"] + w[f"{p}.bq"]
    k = xk @ w[f"{p}.wk"] + w[f"{p}.bk"]
    v = xv @ w[f"{p}.wv"]
    if f"{p}.bv" in w:
        v = v + w[f"{p}.bv"]
    q = q.reshape(b, tq, heads, dh).transpose(0, 2, 1, 3)
    k = k.reshape(b, tk, heads, dh).transpose(0, 2, 3, 1)
    v = v.reshape(b, tk, heads, dh).transpose(0, 2, 1, 3)
    att = ((q @ k) * (1.0 / math.sqrt(dh))).softmax(axis=-1)
    if last_attn is not None:
        last_attn.append(att.data)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(b, tq, d)
    return o @ w[f"{p}.wo"] + w[f"{p}.bo"]


def _ffn(w, p, x):
    return (x @ w[f"{p}.ff.w1"] + w[f"{p}.ff.b1"]).gelu() @ w[f"{p}.ff.w2"] + w[f"{p}.ff.b2"]


def _self_block(w, p, x, heads, attn_log):
    h = layer_norm(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
    x = x + _mha(w, f"{p}.attn", h, h, h, heads, attn_log)
    return x + _ffn(w, p, layer_norm(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"]))


def features(s: Tensor, y: Tensor, a: Tensor, stats: NormStats):
    """Normalised keypoint, gripper and motion features (differentiable)."""
    b, n, _ = s.shape
    c = s.mean(axis=1, keepdims=True)                                  # (B, 1, 2)
    rel = s - c
    kp = concat([rel, c * np.ones((1, n, 1))], axis=-1)                # (B, n, 4)
    kp = (kp - stats.kp_mean) * (1.0 / stats.kp_scale)
    th = y[:, :, 2:3]
    flag = np.broadcast_to(np.array([[[-1.0], [1.0]]]), (b, 2, 1))
    eef = concat([y[:, :, 0:2] - c, th.cos(), th.sin(), Tensor(flag)], axis=-1)   # (B, 2, 5)
    eef = (eef - stats.eef_mean) * (1.0 / stats.eef_scale)
    act = a * (1.0 / stats.act_scale)
    return kp, eef, act


def forward(params: DeformationModelParams, s, y, a, w=None, attn_log=None) -> Tensor:
    """Predicted keypoint displacement.

    ``s``, ``y``, ``a`` may be arrays or Tensors, batched or not.  ``w`` maps
    parameter names to Tensors (defaults to constant wrappers of the weights).
    """
    arch = params.arch
    single = np.ndim(s.data if isinstance(s, Tensor) else s) == 2
    s = s if isinstance(s, Tensor) else tensor(s)
    y = y if isinstance(y, Tensor) else tensor(y)
    a = a if isinstance(a, Tensor) else tensor(a)
    if single:
        s, y, a = s.reshape(1, *s.shape), y.reshape(1, 2, 3), a.reshape(1, 2, 3)
    if s.shape[1] != arch.num_keypoints:
        raise ValueError(f"model expects {arch.num_keypoints} keypoints, got {s.shape[1]}")
    if w is None:
        w = {k: Tensor(v) for k, v in params.weights.items()}
    heads = arch.num_heads
    kp, eef, act = features(s, y, a, params.stats)
    pe = positional_encoding(arch.num_keypoints, arch.embed_dim)

    h = kp @ w["encoder.embed.w"] + w["encoder.embed.b"] + pe
    for i in range(arch.num_encoder_layers):
        h = _self_block(w, f"encoder.l{i}", h, heads, attn_log)
    h = layer_norm(h, w["encoder.lnf.g"], w["encoder.lnf.b"])

    r = eef @ w["robot_encoder.embed.w"] + w["robot_encoder.embed.b"]
    for i in range(arch.num_encoder_layers):
        r = _self_block(w, f"robot_encoder.l{i}", r, heads, attn_log)
    r = layer_norm(r, w["robot_encoder.lnf.g"], w["robot_encoder.lnf.b"])

    m = act @ w["decoder.motion.w"]
    for i in range(arch.num_decoder_layers):
        p = f"decoder.l{i}"
        q = layer_norm(h, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        h = h + _mha(w, f"{p}.attn", q, q, q, heads, attn_log)
        q = layer_norm(h, w[f"{p}.lnx.g"], w[f"{p}.lnx.b"])
        h = h + _mha(w, f"{p}.xattn", q, r, m, heads, attn_log)
        h = h + _ffn(w, p, layer_norm(h, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"]))
    h = layer_norm(h, w["decoder.lnf.g"], w["decoder.lnf.b"])
    out = (h @ w["output_head.w"] + w["output_head.b"]) * params.stats.out_scale
    return out.reshape(out.shape[1], 2) if single else out


def predict(params: DeformationModelParams, s, y, a) -> np.ndarray:
    with no_grad():
        return forward(params, s, y, a).data


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass
class Dataset:
    s: np.ndarray    # (N, n, 2)
    y: np.ndarray    # (N, 2, 3)
    a: np.ndarray    # (N, 2, 3)
    ds: np.ndarray   # (N, n, 2)
    episode: np.ndarray = None  # (N,) trajectory id, consecutive rows within an episode are successive steps

    def __len__(self):
        return len(self.s)

    def subset(self, idx):
        return Dataset(self.s[idx], self.y[idx], self.a[idx], self.ds[idx],
                       None if self.episode is None else self.episode[idx])

    def save(self, path):
        np.savez_compressed(path, s=self.s, y=self.y, a=self.a, ds=self.ds,
                            episode=self.episode if self.episode is not None else np.zeros(len(self.s), int))

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(z["s"], z["y"], z["a"], z["ds"], z["episode"])

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((0, n, 2)), np.zeros((0, 2, 3)), np.zeros((0, 2, 3)), np.zeros((0, n, 2)),
                   np.zeros(0, int))


DEFAULT_A_MAX = np.array([0.01, 0.01, 0.05])


def collect_dataset(cable: dlo_sim.CableParams, num: int, seed: int = 0, a_max=DEFAULT_A_MAX,
                    bounds=((0.05, 0.65), (0.05, 0.65)), episode_len: int = 200,
                    max_keypoint_step: float = 0.04) -> Dataset:
    """Random-target gripper motions in free space, recorded as one-step transitions.

    Each gripper walks toward a random pose target with clipped steps plus
    noise; a new target is drawn on arrival.  Overstretching steps are
    discarded and a new target is drawn, as are snap-through steps where some
    keypoint jumps farther than ``max_keypoint_step`` (the quasi-static
    solver switches buckling branch instantaneously there).
    """
    rng = np.random.default_rng(seed)
    a_max = np.asarray(a_max, dtype=np.float64)
    n = cable.num_keypoints
    L = cable.length
    lo = np.array([bounds[0][0], bounds[1][0]])
    hi = np.array([bounds[0][1], bounds[1][1]])
    out_s, out_y, out_a, out_ds, out_ep = [], [], [], [], []

    def random_robot():
        while True:
            c = lo + rng.random(2) * (hi - lo)
            chord = rng.uniform(0.35, 0.98) * L
            ang = rng.uniform(-np.pi, np.pi)
            half = 0.5 * chord * np.array([math.cos(ang), math.sin(ang)])
            bend = rng.uniform(-1.2, 1.2)
            twist = rng.uniform(-0.4, 0.4)
            r = np.array([[*(c - half), ang + bend + twist], [*(c + half), ang - bend + twist]])
            if np.all(r[:, :2] >= lo) and np.all(r[:, :2] <= hi):
                try:
                    dlo_sim._check_reach(cable, dlo_sim.robot_config(r[0], r[1]))
                    return dlo_sim.robot_config(r[0], r[1])
                except dlo_sim.SimError:
                    continue

    episode = 0
    while len(out_s) < num:
        try:
            state = dlo_sim.init_sim(cable, random_robot(), seed=int(rng.integers(1 << 30)))
        except dlo_sim.SimError:
            continue
        target = random_robot()
        for _ in range(episode_len):
            if len(out_s) >= num:
                break
            err = target - state.robot
            err[:, 2] = dlo_sim.wrap_angle(err[:, 2])
            act = np.clip(err * rng.uniform(0.2, 1.0), -a_max, a_max)
            act = np.clip(act + rng.normal(0.0, 0.35, size=(2, 3)) * a_max, -a_max, a_max)
            if rng.random() < 0.05:
                act = np.zeros((2, 3))
            try:
                nxt = dlo_sim.step(state, act, cable)
            except dlo_sim.SimError:
                target = random_robot()
                episode += 1
                continue
            if not nxt.converged or np.abs(nxt.shape - state.shape).max() > max_keypoint_step:
                target = random_robot()
                state = nxt if nxt.converged else state
                episode += 1
                continue
            out_s.append(state.shape)
            out_y.append(state.robot)
            out_a.append(act)
            out_ds.append(nxt.shape - state.shape)
            out_ep.append(episode)
            state = nxt
            if np.abs(err[:, :2]).max() < 0.01 and np.abs(err[:, 2]).max() < 0.05:
                target = random_robot()
        episode += 1
    return Dataset(np.array(out_s).reshape(-1, n, 2), np.array(out_y).reshape(-1, 2, 3),
                   np.array(out_a).reshape(-1, 2, 3), np.array(out_ds).reshape(-1, n, 2), np.array(out_ep))


def fit_stats(data: Dataset) -> NormStats:
    s = data.s
    c = s.mean(axis=1, keepdims=True)
    rel = s - c
    kp = np.concatenate([rel, np.broadcast_to(c, rel.shape)], axis=-1).reshape(-1, 4)
    eef = np.concatenate([data.y[:, :, :2] - c, np.cos(data.y[:, :, 2:3]), np.sin(data.y[:, :, 2:3]),
                          np.broadcast_to(np.array([[[-1.0], [1.0]]]), (len(s), 2, 1))], axis=-1).reshape(-1, 5)
    eef_scale = eef.std(axis=0)
    eef_scale[-1] = 1.0
    eef_mean = eef.mean(axis=0)
    eef_mean[-1] = 0.0
    rel_std = rel.reshape(-1, 2).std()
    cen_std = c.reshape(-1, 2).std(axis=0)
    kp_mean = np.concatenate([[0.0, 0.0], c.reshape(-1, 2).mean(axis=0)])
    kp_scale = np.concatenate([[rel_std, rel_std], cen_std])
    act_scale = np.maximum(np.abs(data.a).reshape(-1, 3).std(axis=0), 1e-6)
    out_scale = np.full(2, max(np.sqrt((data.ds ** 2).mean()), 1e-9))
    return NormStats(kp_mean, np.maximum(kp_scale, 1e-9), eef_mean, np.maximum(eef_scale, 1e-9), act_scale, out_scale)


# --------------------------------------------------------------------------
# loss and training
# --------------------------------------------------------------------------

def loss(params: DeformationModelParams, batch: Dataset, w=None) -> Tensor:
    """Mean over the batch of the squared displacement error summed over keypoints."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    pred = forward(params, batch.s, batch.y, batch.a, w)
    err = pred - batch.ds
    return (err * err).sum() * (1.0 / len(batch))


def loss_and_grad(params: DeformationModelParams, batch: Dataset, names=None):
    names = list(params.weights) if names is None else names
    trainable = set(names)
    w = {k: Tensor(v, requires_grad=k in trainable) for k, v in params.weights.items()}
    val = loss(params, batch, w)
    val.backward()
    return float(val.data), {k: (w[k].grad if w[k].grad is not None else np.zeros_like(w[k].data)) for k in names}


def eval_loss(params: DeformationModelParams, data: Dataset, batch_size: int = 1024) -> float:
    if len(data) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for i in range(0, len(data), batch_size):
            part = data.subset(slice(i, i + batch_size))
            total += float(loss(params, part).data) * len(part)
    return total / len(data)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    patience: int = 10
    seed: int = 0
    lr_min_frac: float = 0.05


class TrainingDiverged(RuntimeError):
    pass


class AdamW:
    """Adam moments with weight decay applied directly to the parameters."""

    def __init__(self, names, cfg: TrainConfig):
        self.cfg = cfg
        self.names = list(names)
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, weights, grads, lr):
        c = self.cfg
        self.t += 1
        b1t = 1 - c.beta1 ** self.t
        b2t = 1 - c.beta2 ** self.t
        for k in self.names:
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            decay = c.weight_decay if weights[k].ndim > 1 else 0.0
            weights[k] = weights[k] * (1 - lr * decay) - lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


def split_dataset(data: Dataset, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(data))
    nval = int(round(val_fraction * len(data)))
    return data.subset(np.sort(idx[nval:])), data.subset(np.sort(idx[:nval]))


def train(params: DeformationModelParams, data: Dataset, cfg: TrainConfig = TrainConfig(), names=None,
          fit_normalization: bool = True, callback=None):
    """AdamW on the one-step loss; returns (best-validation params, per-epoch history).

    ``names`` restricts which weights are updated (all by default).
    """
    params = params.copy()
    if cfg.epochs == 0 or len(data) == 0:
        return params, []
    train_set, val_set = split_dataset(data, cfg.val_fraction, cfg.seed)
    if fit_normalization:
        params.stats = fit_stats(train_set)
    names = list(params.weights) if names is None else list(names)
    opt = AdamW(names, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    best = params.copy()
    best_val = eval_loss(params, val_set) if len(val_set) else np.inf
    history = [{"epoch": 0, "train": float("nan"), "val": best_val}]
    stale = 0
    steps_per_epoch = max(1, math.ceil(len(train_set) / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step_i = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        run = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = train_set.subset(order[i:i + cfg.batch_size])
            val, grads = loss_and_grad(params, batch, names)
            if not np.isfinite(val):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            frac = step_i / max(1, total_steps - 1)
            lr = cfg.lr * (cfg.lr_min_frac + (1 - cfg.lr_min_frac) * 0.5 * (1 + math.cos(math.pi * frac)))
            opt.step(params.weights, grads, lr)
            run += val * len(batch)
            step_i += 1
        tr = run / len(train_set)
        vl = eval_loss(params, val_set) if len(val_set) else tr
        history.append({"epoch": epoch, "train": tr, "val": vl})
        log.info("epoch %d train %.6g val %.6g", epoch, tr, vl)
        if callback is not None:
            callback(history[-1])
        if vl < best_val:
            best_val = vl
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


def finetune_decoder(params: DeformationModelParams, data: Dataset, cfg: TrainConfig = None):
    """Update only decoder and output-head weights; encoders stay bit-identical."""
    if len(data) == 0:
        return params.copy()
    cfg = cfg or TrainConfig(epochs=10, lr=3e-4, patience=5)
    names = params.names("decoder") + params.names("output_head")
    tuned, _ = train(params, data, cfg, names=names, fit_normalization=False)
    return tuned


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(params: DeformationModelParams, path):
    meta = {"version": CHECKPOINT_VERSION, "arch": asdict(params.arch), "stats": params.stats.to_dict()}
    arrays = {f"w::{k}": v for k, v in params.weights.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> DeformationModelParams:
    z = np.load(path)
    meta = json.loads(bytes(z["__meta__"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    arch = ModelArch(**meta["arch"])
    shapes = param_shapes(arch)
    weights = {k[3:]: z[k] for k in z.files if k.startswith("w::")}
    if set(weights) != set(shapes):
        raise ValueError("checkpoint parameters do not match the architecture")
    for k, shp in shapes.items():
        if weights[k].shape != shp:
            raise ValueError(f"parameter {k} has shape {weights[k].shape}, expected {shp}")
    return DeformationModelParams(arch, weights, NormStats.from_dict(meta["stats"]))


# --------------------------------------------------------------------------
# Broyden baseline
# --------------------------------------------------------------------------

def _windows(data: Dataset, horizon: int, warmup: int):
    """Start rows k such that rows k .. k+horizon-1 are successive steps preceded by ``warmup`` steps."""
    ep = data.episode
    starts = []
    for k in range(warmup, len(data) - horizon + 1):
        if ep[k - warmup] == ep[k + horizon - 1]:
            starts.append(k)
    return np.array(starts, dtype=int)


def open_loop_error(params: DeformationModelParams, data: Dataset, horizon: int = 5, warmup: int = 10,
                    max_windows: int = 500) -> float:
    """Mean keypoint distance after ``horizon`` model steps fed with recorded actions only."""
    starts = _windows(data, horizon, warmup)[:max_windows]
    if len(starts) == 0:
        raise ValueError("no contiguous windows of the requested length")
    s = data.s[starts].copy()
    for h in range(horizon):
        rows = starts + h
        s = s + predict(params, s, data.y[rows], data.a[rows])
    truth = data.s[starts + horizon - 1] + data.ds[starts + horizon - 1]
    return float(np.linalg.norm(s - truth, axis=-1).mean())


def broyden_open_loop_error(data: Dataset, horizon: int = 5, warmup: int = 10, max_windows: int = 500) -> float:
    """Same metric for a linear Jacobian refined online by Broyden updates over the preceding steps."""
    starts = _windows(data, horizon, warmup)[:max_windows]
    if len(starts) == 0:
        raise ValueError("no contiguous windows of the requested length")
    n = data.s.shape[1]
    errs = []
    for k in starts:
        J = np.zeros((2 * n, 6))
        for j in range(k - warmup, k):
            J = broyden_jacobian(J, data.ds[j], data.a[j])
        s = data.s[k].ravel().copy()
        for h in range(horizon):
            s = s + J @ data.a[k + h].ravel()
        truth = data.s[k + horizon - 1] + data.ds[k + horizon - 1]
        errs.append(np.linalg.norm(s.reshape(n, 2) - truth, axis=-1).mean())
    return float(np.mean(errs))


def broyden_jacobian(J, observed_ds, a, eps: float = 1e-12):
    """Rank-one secant update J <- J + (ds - J a) a^T / (a^T a); skipped for tiny actions."""
    a = np.asarray(a, dtype=np.float64).ravel()
    ds = np.asarray(observed_ds, dtype=np.float64).ravel()
    aa = float(a @ a)
    if math.sqrt(aa) <= eps:
        return np.array(J, dtype=np.float64, copy=True)
    return J + np.outer(ds - J @ a, a) / aa
