"""Deep contour-aware network: a shared downsampling path feeding an object
branch and a contour branch, each predicting from several depths.

Parameter names encode the partition of trainable weights:

* ``s.stage{k}.conv{j}.{w,b}``  shared downsampling path
* ``o.tap{k}.up{u}.{w,b}`` / ``o.tap{k}.cls.{w,b}``  object branch
* ``c.tap{k}.up{u}.{w,b}`` / ``c.tap{k}.cls.{w,b}``  contour branch

Each tap ``k`` takes the pooled features of stage ``k`` (resolution
``input_size / 2**k``), upsamples them through ``k`` stride-2
deconvolutions, applies dropout and a 1x1 classifier.  Tap scores are
summed before the softmax; each tap's own softmax is its auxiliary
prediction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dcan import tensor as T
from dcan.augment import AugmentSpec, Sample, augment, plan_tiles, random_crop, reflect_pad, stitch
from dcan.morphology import extract_contour_labels

log = logging.getLogger(__name__)

BRANCHES = ("o", "c")
CKPT_MAGIC = b"DCAN-CKPT v1\n"


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class DcanConfig:
    input_size: int = 64
    in_channels: int = 3
    num_pool_stages: int = 3
    channels_per_stage: tuple = (16, 32, 64)
    convs_per_stage: int = 2
    branch_taps: tuple = (2, 3)
    branch_channels: int = 16
    dropout_rate: float = 0.5
    weight_decay: float = 5e-4

    def validate(self) -> "DcanConfig":
        self.channels_per_stage = tuple(int(c) for c in self.channels_per_stage)
        self.branch_taps = tuple(sorted(int(t) for t in self.branch_taps))
        if self.num_pool_stages < 1 or len(self.channels_per_stage) != self.num_pool_stages:
            raise ConfigError(
                f"channels_per_stage needs {self.num_pool_stages} entries, got {self.channels_per_stage}")
        if not self.branch_taps or len(set(self.branch_taps)) != len(self.branch_taps):
            raise ConfigError("branch_taps must be a non-empty set of stage indices")
        if not all(1 <= t <= self.num_pool_stages for t in self.branch_taps):
            raise ConfigError(f"branch_taps {self.branch_taps} not within 1..{self.num_pool_stages}")
        for t in self.branch_taps:
            if self.input_size % 2**t:
                raise ConfigError(f"input_size {self.input_size} not divisible by 2**{t} for tap {t}")
        if self.convs_per_stage < 1 or self.branch_channels < 1 or self.in_channels < 1:
            raise ConfigError("convs_per_stage, branch_channels and in_channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        return self


@dataclass
class TrainSchedule:
    """Learning-rate and auxiliary-weight schedules.

    The learning rate drops by ``lr_drop_factor`` whenever the mean loss of
    the latest ``lr_window`` iterations fails to improve on the previous
    window's mean by ``lr_min_improvement`` (relative).  The auxiliary
    weight drops by ``wa_drop_factor`` every ``wa_interval`` iterations.
    Both stop at their floors.
    """

    lr0: float = 0.02
    lr_drop_factor: float = 10.0
    lr_floor: float = 1e-7
    lr_window: int = 200
    lr_min_improvement: float = 1e-3
    wa0: float = 1.0
    wa_drop_factor: float = 10.0
    wa_interval: int = 500
    wa_floor: float = 1e-3
    max_iters: int = 2000

    def wa(self, t: int) -> float:
        steps = t // self.wa_interval
        w = self.wa0
        for _ in range(steps):
            w /= self.wa_drop_factor
            if w <= self.wa_floor:
                return self.wa_floor
        return max(w, self.wa_floor)


class LrSchedule:
    """Plateau-triggered step schedule driven by the observed loss curve."""

    def __init__(self, schedule: TrainSchedule):
        self.s = schedule
        self.lr = schedule.lr0
        self._window: list[float] = []
        self._prev: float | None = None

    def observe(self, loss: float) -> float:
        self._window.append(loss)
        if len(self._window) == self.s.lr_window:
            mean = sum(self._window) / len(self._window)
            if self._prev is not None and mean > self._prev * (1.0 - self.s.lr_min_improvement):
                self.lr = max(self.lr / self.s.lr_drop_factor, min(self.lr, self.s.lr_floor))
            self._prev = mean
            self._window = []
        return self.lr


@dataclass
class DcanModel:
    config: DcanConfig
    params: dict

    def partition(self, prefix: str) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def copy(self) -> "DcanModel":
        return DcanModel(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class ProbabilityMaps:
    """Foreground probabilities of both branches, shape ``(..., H, W)``.

    ``aux`` maps ``(branch, tap)`` to that tap's own softmax foreground map.
    """

    p_o: np.ndarray
    p_c: np.ndarray
    aux: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    maps: ProbabilityMaps
    scores: dict  # (branch, tap) -> (N, 2, H, W) classifier scores
    fused: dict  # branch -> summed scores
    cache: dict = field(repr=False, default_factory=dict)


# --- construction ---------------------------------------------------------------

def layer_shapes(config: DcanConfig) -> dict:
    """Ordered map of parameter name -> shape."""
    shapes = {}
    c_in = config.in_channels
    for k, c in enumerate(config.channels_per_stage, start=1):
        for j in range(1, config.convs_per_stage + 1):
            shapes[f"s.stage{k}.conv{j}.w"] = (c, c_in, 3, 3)
            shapes[f"s.stage{k}.conv{j}.b"] = (c,)
            c_in = c
    bc = config.branch_channels
    for b in BRANCHES:
        for t in config.branch_taps:
            c_in = config.channels_per_stage[t - 1]
            for u in range(1, t + 1):
                shapes[f"{b}.tap{t}.up{u}.w"] = (c_in, bc, 4, 4)
                shapes[f"{b}.tap{t}.up{u}.b"] = (bc,)
                c_in = bc
            shapes[f"{b}.tap{t}.cls.w"] = (2, bc, 1, 1)
            shapes[f"{b}.tap{t}.cls.b"] = (2,)
    return shapes


def fan_in(name: str, shape) -> float:
    """Inputs feeding one output unit; a stride-2 deconvolution sees a quarter of its taps."""
    if ".up" in name:
        return shape[0] * shape[2] * shape[3] / 4.0
    return float(np.prod(shape[1:]))


def build_model(config: DcanConfig, rng: np.random.Generator) -> DcanModel:
    """Gaussian weights with std ``sqrt(2 / fan_in)``; zero biases."""
    config.validate()
    params = {}
    for name, shape in layer_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in(name, shape))
    return DcanModel(config, params)


def param_count(model: DcanModel) -> int:
    return sum(v.size for v in model.params.values())


# --- forward / backward ---------------------------------------------------------

def _conv_spec(params, name, stride=1, padding=1):
    return T.ConvSpec(params[name + ".w"], params[name + ".b"], stride=stride, padding=padding)


def forward(model: DcanModel, image: np.ndarray, train_mode: bool = False, rng=None) -> ForwardResult:
    """Run both branches on ``image`` of shape (N, C, S, S) or (C, S, S)."""
    cfg, p = model.config, model.params
    x = np.asarray(image, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise T.ShapeError(f"expected (N, {cfg.in_channels}, H, W) input, got {x.shape}")
    if x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise T.ShapeError(f"input spatial size {x.shape[2:]} != configured {cfg.input_size}")
    if train_mode and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng")

    cache: dict = {"input_shape": x.shape, "squeeze": squeeze}
    taps = {}
    h = x
    for k in range(1, max(cfg.branch_taps) + 1):
        for j in range(1, cfg.convs_per_stage + 1):
            name = f"s.stage{k}.conv{j}"
            pre = T.conv2d_forward(h, _conv_spec(p, name))
            cache[name] = (h, pre)
            h = T.relu(pre)
        pooled, arg = T.maxpool_forward(h, 2, 2)
        cache[f"s.stage{k}.pool"] = (h.shape, arg)
        h = pooled
        taps[k] = h

    scores, fused = {}, {}
    for b in BRANCHES:
        total = None
        for t in cfg.branch_taps:
            f = taps[t]
            for u in range(1, t + 1):
                name = f"{b}.tap{t}.up{u}"
                pre = T.deconv2d_forward(f, _conv_spec(p, name, stride=2, padding=1))
                cache[name] = (f, pre)
                f = T.relu(pre)
            dropped, scale = T.dropout(f, cfg.dropout_rate, train_mode, rng)
            name = f"{b}.tap{t}.cls"
            s = T.conv2d_forward(dropped, _conv_spec(p, name, padding=0))
            cache[name] = (dropped, scale)
            scores[b, t] = s
            total = s if total is None else total + s
        fused[b] = total

    def fg(s):
        prob = T.softmax(s)[:, 1]
        return prob[0] if squeeze else prob

    maps = ProbabilityMaps(fg(fused["o"]), fg(fused["c"]), {key: fg(s) for key, s in scores.items()})
    return ForwardResult(maps, scores, fused, cache)


def backward(model: DcanModel, result: ForwardResult, grad_scores: dict) -> dict:
    """Gradients of the loss w.r.t. every parameter, given d(loss)/d(tap scores)."""
    cfg, p, cache = model.config, model.params, result.cache
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    grad_taps: dict[int, np.ndarray] = {}

    for b in BRANCHES:
        for t in cfg.branch_taps:
            g = grad_scores.get((b, t))
            if g is None:
                continue
            name = f"{b}.tap{t}.cls"
            dropped, scale = cache[name]
            gx, gk, gb = T.conv2d_backward(dropped, _conv_spec(p, name, padding=0), g)
            grads[name + ".w"] += gk
            grads[name + ".b"] += gb
            if scale is not None:
                gx = gx * scale
            for u in range(t, 0, -1):
                name = f"{b}.tap{t}.up{u}"
                f_in, pre = cache[name]
                gx = T.relu_backward(pre, gx)
                gx, gk, gb = T.deconv2d_backward(f_in, _conv_spec(p, name, stride=2, padding=1), gx)
                grads[name + ".w"] += gk
                grads[name + ".b"] += gb
            grad_taps[t] = grad_taps[t] + gx if t in grad_taps else gx

    g = None
    for k in range(max(cfg.branch_taps), 0, -1):
        if k in grad_taps:
            g = grad_taps[k] if g is None else g + grad_taps[k]
        if g is None:
            continue
        shape, arg = cache[f"s.stage{k}.pool"]
        g = T.maxpool_backward(shape, arg, g)
        for j in range(cfg.convs_per_stage, 0, -1):
            name = f"s.stage{k}.conv{j}"
            h_in, pre = cache[name]
            g = T.relu_backward(pre, g)
            g, gk, gb = T.conv2d_backward(h_in, _conv_spec(p, name), g)
            grads[name + ".w"] += gk
            grads[name + ".b"] += gb
    return grads


def weight_penalty(model: DcanModel) -> float:
    """0.5 * sum of squared kernel weights (biases excluded)."""
    return 0.5 * sum(float(np.vdot(v, v)) for k, v in model.params.items() if T.is_decayed(k))


def total_loss(model: DcanModel, result: ForwardResult, labels, w_a: float, weight_decay=None):
    """Multi-task loss and its gradient w.r.t. the tap scores.

    ``labels`` is ``(object_plane, contour_plane)``.  Every cross-entropy term
    is the per-pixel mean over the batch; the regulariser is
    ``weight_decay * 0.5 * ||W||^2`` over kernels.  Returns
    ``(loss, breakdown, grad_scores)``; the regulariser's gradient is applied
    by ``sgd_step``.
    """
    lam = model.config.weight_decay if weight_decay is None else weight_decay
    n, _, h, w = result.fused["o"].shape
    npix = n * h * w
    loss = 0.0
    breakdown = {}
    grad_scores = {}
    for b, lab in zip(BRANCHES, labels):
        lab = np.asarray(lab)
        l_f, g_f = T.softmax_xent(result.fused[b], lab)
        breakdown[f"fused_{b}"] = l_f / npix
        loss += l_f / npix
        for t in model.config.branch_taps:
            g = g_f / npix
            if w_a:
                l_a, g_a = T.softmax_xent(result.scores[b, t], lab)
                breakdown[f"aux_{b}{t}"] = w_a * l_a / npix
                loss += w_a * l_a / npix
                g = g + (w_a / npix) * g_a
            grad_scores[b, t] = g
    reg = lam * weight_penalty(model) if lam else 0.0
    breakdown["reg"] = reg
    return loss + reg, breakdown, grad_scores


# --- training -------------------------------------------------------------------

def make_labels(instances: np.ndarray, contour_radius: int = 3):
    """Object and contour label planes for one instance mask."""
    return (np.asarray(instances) > 0).astype(np.int64), extract_contour_labels(instances, contour_radius).astype(np.int64)


@dataclass
class TrainingSample:
    image: np.ndarray
    objects: np.ndarray
    contours: np.ndarray


def prepare_dataset(samples, contour_radius: int = 3) -> list[TrainingSample]:
    """Attach label planes; contours come from the full image so crops do not invent edges."""
    out = []
    for s in samples:
        lo, lc = make_labels(s.instances, contour_radius)
        out.append(TrainingSample(np.asarray(s.image, dtype=np.float64), lo, lc))
    return out


def draw_crop(sample: TrainingSample, size: int, spec: AugmentSpec | None, rng) -> TrainingSample:
    # object/contour planes ride along in one integer plane: 2 * object + contour
    packed = Sample(sample.image, sample.objects * 2 + sample.contours)
    crop = random_crop(packed, size, rng)
    if spec is not None:
        crop = augment(crop, spec, rng)
    return TrainingSample(crop.image, crop.instances // 2, crop.instances % 2)


def train_step(model: DcanModel, sample: TrainingSample, lr: float, w_a: float, rng):
    result = forward(model, sample.image, train_mode=True, rng=rng)
    loss, parts, grad_scores = total_loss(model, result, (sample.objects, sample.contours), w_a)
    grads = backward(model, result, grad_scores)
    T.sgd_step(model.params, grads, lr, model.config.weight_decay)
    return loss, parts


def train(model: DcanModel, dataset, schedule: TrainSchedule, rng, augment_spec: AugmentSpec | None = None,
          log_every: int = 0, callback=None):
    """SGD on single random crops.

    ``dataset`` is a list of :class:`TrainingSample` (see :func:`prepare_dataset`).
    Samples are visited in a fresh random order every epoch.  Returns the
    model (updated in place) and the per-iteration total-loss curve.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    size = model.config.input_size
    lr_sched = LrSchedule(schedule)
    lr = schedule.lr0
    losses = []
    order: list[int] = []
    for it in range(schedule.max_iters):
        if not order:
            order = list(rng.permutation(len(dataset)))
        sample = draw_crop(dataset[order.pop()], size, augment_spec, rng)
        w_a = schedule.wa(it)
        loss, parts = train_step(model, sample, lr, w_a, rng)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at iteration {it}")
        losses.append(loss)
        lr = lr_sched.observe(loss)
        if log_every and (it + 1) % log_every == 0:
            recent = losses[-log_every:]
            log.info("iter %d loss %.4f (fused_o %.4f fused_c %.4f) lr %.2g w_a %.2g", it + 1,
                     sum(recent) / len(recent), parts["fused_o"], parts["fused_c"], lr, w_a)
        if callback is not None:
            callback(it, loss, parts)
    return model, losses


# --- inference ------------------------------------------------------------------

def predict_tiled(model: DcanModel, image: np.ndarray, tile: int | None = None, stride: int | None = None,
                  predict=None) -> ProbabilityMaps:
    """Whole-image maps by averaging overlapping tile predictions.

    ``image`` is (C, H, W).  Images smaller than a tile are reflect-padded,
    predicted and cropped back.  ``predict`` maps a (C, t, t) tile to a
    ``(2, t, t)`` array of (p_o, p_c); it defaults to an inference-mode
    forward pass of ``model``.
    """
    size = model.config.input_size if model is not None else tile
    tile = size if tile is None else tile
    if tile != size:
        raise T.ShapeError(f"tile {tile} must equal the model input size {size}")
    stride = tile if stride is None else stride
    if predict is None:
        def predict(x):
            r = forward(model, x, train_mode=False)
            return np.stack([r.maps.p_o, r.maps.p_c])

    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[1:]
    padded = reflect_pad(image, tile)
    ph, pw = padded.shape[1:]
    offsets = plan_tiles((ph, pw), tile, stride)
    tiles = [predict(padded[:, y : y + tile, x : x + tile]) for y, x in offsets]
    full = stitch((ph, pw), offsets, tiles)
    y0, x0 = (ph - h) // 2, (pw - w) // 2
    full = full[:, y0 : y0 + h, x0 : x0 + w]
    return ProbabilityMaps(full[0], full[1])


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(model: DcanModel, path) -> None:
    """Text record header per parameter followed by little-endian float64 payload."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        for name, arr in model.params.items():
            shape = tuple(arr.shape) + (1,) * (4 - arr.ndim)
            fh.write(f"{name} {' '.join(str(d) for d in shape)}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a DCAN-CKPT v1 file")
    pos = len(CKPT_MAGIC)
    params = {}
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated record header at byte {pos}")
        fields = data[pos:end].decode("ascii").split()
        if len(fields) != 5:
            raise ValueError(f"{path}: malformed record header {data[pos:end]!r}")
        name, shape = fields[0], tuple(int(v) for v in fields[1:])
        nbytes = 8 * int(np.prod(shape))
        pos = end + 1
        if pos + nbytes > len(data):
            raise ValueError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64)
        params[name] = arr.reshape(shape[0]) if name.endswith(".b") else arr.reshape(shape)
        pos += nbytes
    return params


def config_from_params(params: dict, input_size: int = 64, **overrides) -> DcanConfig:
    """Recover the architecture from parameter names and shapes."""
    stages = sorted({int(k.split(".")[1][5:]) for k in params if k.startswith("s.stage")})
    convs = len({k.split(".")[2] for k in params if k.startswith("s.stage1.")})
    taps = sorted({int(k.split(".")[1][3:]) for k in params if k.startswith("o.tap")})
    if not stages or not taps:
        raise ConfigError("checkpoint holds no recognisable DCAN parameters")
    channels = tuple(params[f"s.stage{k}.conv1.w"].shape[0] for k in stages)
    cfg = DcanConfig(
        input_size=input_size,
        in_channels=params["s.stage1.conv1.w"].shape[1],
        num_pool_stages=len(stages),
        channels_per_stage=channels,
        convs_per_stage=convs,
        branch_taps=tuple(taps),
        branch_channels=params[f"o.tap{taps[0]}.cls.w"].shape[1],
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def load_checkpoint(path, input_size: int = 64, **overrides) -> DcanModel:
    params = read_checkpoint(path)
    cfg = config_from_params(params, input_size, **overrides)
    expected = layer_shapes(cfg)
    if list(expected) != list(params) or any(tuple(params[k].shape) != s for k, s in expected.items()):
        raise ConfigError(f"{path}: parameter layout does not match a DCAN architecture")
    return DcanModel(cfg, params)


def load_weights(model: DcanModel, path, prefixes=("s",)) -> list[str]:
    """Copy matching parameters from a checkpoint into ``model`` (e.g. a pre-trained downsampling path).

    Only names under one of ``prefixes`` with identical shapes are taken;
    returns the names that were loaded.
    """
    src = read_checkpoint(path)
    loaded = []
    for name, arr in src.items():
        if name.split(".")[0] in prefixes and name in model.params and model.params[name].shape == arr.shape:
            model.params[name] = arr.copy()
            loaded.append(name)
    return loaded
