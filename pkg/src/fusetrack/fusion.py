"""Late fusion of the two modality response maps.

A frozen convolutional stem feeds two trainable heads: a global head emitting
a scalar weight w_G and a local head emitting a per-cell map W_L, both
sigmoid-bounded. The final weight W_F = w_G * W_L blends the RGB and thermal
response maps; training minimizes the squared distance between the fused map
and a Gaussian target, with gradients flowing only through the weights.

Also here: the constant / intensity / tracking-quality fusion baselines, the
image-fusion application and its EN / MI / SSIM metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import img, nnet
from .cftrack import quality
from .nnet import (BilinearResize, Conv2D, Deconv2D, LRN, Network, ReLU,
                   Sigmoid)

PATCH_SIZE = 200
STEM_SPATIAL = 25  # 200 -> 100 -> 50 -> 25 under three stride-2 convs
STEM_CHANNELS = 256


class FusionError(ValueError):
    pass


@dataclass
class FusionWeights:
    w_g: float
    w_l: np.ndarray  # (N, M)

    @property
    def w_f(self) -> np.ndarray:
        return self.w_g * self.w_l


@dataclass
class MfNet:
    stem: Network
    global_head: Network
    local_head: Network
    map_size: tuple[int, int]  # (M, N)
    patch_size: int = PATCH_SIZE


def build_mfnet(map_size, seed: int = 0) -> MfNet:
    """Fresh network. The stem is randomly initialized and frozen; the heads'
    final layers start at zero weight with a bias chosen so that a fresh net
    fuses at W_F ~ 0.5 (w_G = W_L = sqrt(0.5))."""
    m, n = map_size
    rng = np.random.default_rng(seed)
    stem = Network([
        Conv2D(3, 3, 1, 8, stride=2, pad=1, rng=rng), ReLU(), LRN(),
        Conv2D(3, 3, 8, 32, stride=2, pad=1, rng=rng), ReLU(), LRN(),
        Conv2D(3, 3, 32, STEM_CHANNELS, stride=2, pad=1, rng=rng), ReLU(), LRN(),
    ], frozen=True)
    ghead_final = Conv2D(9, 9, 256, 1, stride=1, pad=0, rng=rng)
    lhead_final = Deconv2D(3, 3, 256, 1, stride=2, pad=1, rng=rng)
    sqrt_half_logit = float(np.log(np.sqrt(0.5) / (1.0 - np.sqrt(0.5))))
    for layer in (ghead_final, lhead_final):
        layer.w[...] = 0.0
        layer.b[...] = sqrt_half_logit
    global_head = Network([
        Conv2D(3, 3, 2 * STEM_CHANNELS, 256, stride=1, pad=1, rng=rng), ReLU(), LRN(),
        BilinearResize(9, 9),
        ghead_final,
        Sigmoid(),
    ])
    local_head = Network([
        Deconv2D(3, 3, 2 * STEM_CHANNELS, 256, stride=2, pad=1, rng=rng), ReLU(),
        lhead_final,
        BilinearResize(n, m),
        Sigmoid(),
    ])
    return MfNet(stem=stem, global_head=global_head, local_head=local_head,
                 map_size=(m, n))


def _patch_tensor(patch: np.ndarray) -> np.ndarray:
    g = img.to_gray(patch)
    if g.shape != (PATCH_SIZE, PATCH_SIZE):
        raise FusionError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {g.shape}")
    return g[None, :, :]


def stem_features(net: MfNet, p_rgb: np.ndarray, p_t: np.ndarray) -> np.ndarray:
    """Concatenated frozen features of the two modality patches, (512, 25, 25)."""
    f_rgb = net.stem.forward(_patch_tensor(p_rgb))
    f_t = net.stem.forward(_patch_tensor(p_t))
    return np.concatenate([f_rgb, f_t], axis=0)


def heads_forward(net: MfNet, feats: np.ndarray) -> FusionWeights:
    w_g = float(net.global_head.forward(feats)[0, 0, 0])
    w_l = net.local_head.forward(feats)[0]
    return FusionWeights(w_g=w_g, w_l=w_l)


def mfnet_forward(net: MfNet, p_rgb: np.ndarray, p_t: np.ndarray) -> FusionWeights:
    return heads_forward(net, stem_features(net, p_rgb, p_t))


def fuse_responses(r_rgb: np.ndarray, r_t: np.ndarray, wf: np.ndarray) -> np.ndarray:
    """R_F = W_F o R_RGB + (1 - W_F) o R_T, elementwise."""
    if r_rgb.shape != r_t.shape or r_rgb.shape != np.shape(wf):
        raise FusionError(f"shape mismatch: {r_rgb.shape}, {r_t.shape}, {np.shape(wf)}")
    return wf * r_rgb + (1.0 - wf) * r_t


def constant_fuse(w: float, map_size) -> np.ndarray:
    if not 0.0 <= w <= 1.0:
        raise FusionError(f"constant weight {w} outside [0,1]")
    m, n = map_size
    return np.full((n, m), float(w))


def intensity_fuse(r_rgb: np.ndarray, r_t: np.ndarray, i_1: float,
                   patch_t: np.ndarray) -> np.ndarray:
    """Penalized average assuming constant target temperature: the penalty at
    each cell is min(i_t/i_1, i_1/i_t) of the thermal intensity there."""
    if i_1 <= 0:
        raise FusionError("reference intensity must be positive")
    n, m = r_rgb.shape
    it = np.maximum(img.resize_bilinear(img.to_gray(patch_t), (m, n)), 1e-6)
    p = np.minimum(it / i_1, i_1 / it)
    return 0.5 * p * (r_rgb + r_t)


def quality_fuse(r_rgb: np.ndarray, r_t: np.ndarray) -> np.ndarray:
    """Blend weighted by each modality's MAX-PSR tracking quality."""
    q_rgb, q_t = quality(r_rgb), quality(r_t)
    total = q_rgb + q_t
    if total < 1e-9:
        w = 0.5
    else:
        w = q_rgb / total
    return w * r_rgb + (1.0 - w) * r_t


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainPair:
    p_rgb: np.ndarray     # 200x200 init/label-frame patches
    p_t: np.ndarray
    y: np.ndarray         # (N, M) Gaussian target
    r_rgb: np.ndarray     # frozen per-modality response maps, (N, M)
    r_t: np.ndarray
    _feats: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class TrainSchedule:
    epochs_global: int = 10
    epochs_local: int = 10
    epochs_joint: int = 5
    lr: float = 1e-5          # stages 1-2
    lr_joint: float = 1e-7    # joint fine-tuning
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


def pair_loss_and_grads(net: MfNet, pair: TrainPair, stage: str) -> float:
    """Forward + backward for one pair; accumulates head parameter gradients.

    stage: 'global' (W_L fixed at 1), 'local' (global head frozen), 'joint'.
    """
    feats = pair._feats
    if feats is None:
        feats = stem_features(net, pair.p_rgb, pair.p_t)
        pair._feats = feats
    w_g = float(net.global_head.forward(feats)[0, 0, 0])
    if stage == "global":
        w_l = np.ones_like(pair.y)
    else:
        w_l = net.local_head.forward(feats)[0]
    w_f = w_g * w_l
    r_f = fuse_responses(pair.r_rgb, pair.r_t, w_f)
    diff = r_f - pair.y
    loss = float(np.sum(diff * diff))
    d_wf = 2.0 * diff * (pair.r_rgb - pair.r_t)
    if stage in ("global", "joint") or stage == "local":
        d_wg = float(np.sum(d_wf * w_l))
        if stage != "local":
            net.global_head.backward(np.array([[[d_wg]]]))
    if stage in ("local", "joint"):
        d_wl = d_wf * w_g
        net.local_head.backward(d_wl[None])
    return loss


def _run_stage(net: MfNet, data, stage, epochs, lr, sched, rng):
    nets = {"global": [net.global_head], "local": [net.local_head],
            "joint": [net.global_head, net.local_head]}[stage]
    trace = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), sched.batch_size):
            batch = [data[i] for i in order[start : start + sched.batch_size]]
            for n_ in nets:
                n_.zero_grads()
            for pair in batch:
                total += pair_loss_and_grads(net, pair, stage)
            for n_ in nets:
                for g in n_.grads():
                    g /= len(batch)
                n_.sgd_step(lr, sched.momentum, sched.weight_decay)
        trace.append(total / len(data))
    return trace


def mfnet_train(net: MfNet, data, schedule: TrainSchedule = TrainSchedule()):
    """Staged training: global head first, then local with the global head
    frozen, then a joint fine-tune at the smaller rate. Returns the per-epoch
    mean loss trace as a dict keyed by stage."""
    if not data:
        raise FusionError("empty training dataset")
    for pair in data:
        if pair.y.shape != pair.r_rgb.shape or pair.y.shape != pair.r_t.shape:
            raise FusionError("response/target map shapes differ within a pair")
    rng = np.random.default_rng(schedule.seed)
    trace = {}
    trace["global"] = _run_stage(net, data, "global", schedule.epochs_global,
                                 schedule.lr, schedule, rng)
    trace["local"] = _run_stage(net, data, "local", schedule.epochs_local,
                                schedule.lr, schedule, rng)
    trace["joint"] = _run_stage(net, data, "joint", schedule.epochs_joint,
                                schedule.lr_joint, schedule, rng)
    return trace


def fusion_loss_grad_check(net: MfNet, pair: TrainPair, eps: float = 1e-4,
                           max_params: int = 400, seed: int = 0) -> float:
    """Central-difference check of the composed fusion loss wrt head parameters."""
    def loss_only():
        feats = pair._feats
        if feats is None:
            pair._feats = feats = stem_features(net, pair.p_rgb, pair.p_t)
        w_g = float(net.global_head.forward(feats)[0, 0, 0])
        w_l = net.local_head.forward(feats)[0]
        diff = fuse_responses(pair.r_rgb, pair.r_t, w_g * w_l) - pair.y
        return float(np.sum(diff * diff))

    net.global_head.zero_grads()
    net.local_head.zero_grads()
    pair_loss_and_grads(net, pair, "joint")
    params = net.global_head.params() + net.local_head.params()
    grads = [g.copy() for g in net.global_head.grads() + net.local_head.grads()]
    flat = [(pi, i) for pi, p in enumerate(params) for i in range(p.size)]
    rng = np.random.default_rng(seed)
    if len(flat) > max_params:
        sel = rng.choice(len(flat), size=max_params, replace=False)
        flat = [flat[i] for i in sel]
    worst = 0.0
    for pi, i in flat:
        p = params[pi].reshape(-1)
        orig = p[i]
        p[i] = orig + eps
        lp = loss_only()
        p[i] = orig - eps
        lm = loss_only()
        p[i] = orig
        num = (lp - lm) / (2 * eps)
        ana = float(grads[pi].reshape(-1)[i])
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-4))
    return worst


def save_mfnet(path, net: MfNet) -> None:
    combined = Network(net.stem.layers + net.global_head.layers + net.local_head.layers)
    nnet.save_checkpoint(path, combined)


def load_mfnet(path, map_size, seed: int = 0) -> MfNet:
    net = build_mfnet(map_size, seed=seed)
    combined = Network(net.stem.layers + net.global_head.layers + net.local_head.layers)
    nnet.load_checkpoint(path, combined)
    return net


_PAIR_MAGIC = b"TPR1"


def save_pair(path, pair: TrainPair) -> None:
    """Per-pair binary record: magic, int32 LE dims (patch h,w and map n,m),
    then float32 p_rgb, p_t, y, r_rgb, r_t."""
    import struct
    with open(path, "wb") as f:
        f.write(_PAIR_MAGIC)
        ph, pw = pair.p_rgb.shape
        n, m = pair.y.shape
        f.write(struct.pack("<4i", ph, pw, n, m))
        for a in (pair.p_rgb, pair.p_t, pair.y, pair.r_rgb, pair.r_t):
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_pair(path) -> TrainPair:
    import struct
    with open(path, "rb") as f:
        if f.read(4) != _PAIR_MAGIC:
            raise FusionError(f"{path}: bad training-pair magic")
        ph, pw, n, m = struct.unpack("<4i", f.read(16))

        def arr(h, w):
            return np.frombuffer(f.read(4 * h * w), dtype="<f4").reshape(h, w).astype(np.float64)

        return TrainPair(p_rgb=arr(ph, pw), p_t=arr(ph, pw), y=arr(n, m),
                         r_rgb=arr(n, m), r_t=arr(n, m))


def load_pair_dir(path):
    from pathlib import Path
    files = sorted(Path(path).glob("*.bin"))
    if not files:
        raise FusionError(f"no training pairs in {path}")
    return [load_pair(p) for p in files]


# ---------------------------------------------------------------------------
# image-fusion application and quality metrics


def fuse_images(i_rgb: np.ndarray, i_t: np.ndarray, wf_full: np.ndarray) -> np.ndarray:
    """I_F = W_F o I_RGB + (1 - W_F) o I_T on grayscale images."""
    if i_rgb.shape != i_t.shape or i_rgb.shape != wf_full.shape:
        raise FusionError(f"shape mismatch: {i_rgb.shape}, {i_t.shape}, {wf_full.shape}")
    return wf_full * i_rgb + (1.0 - wf_full) * i_t


def image_fusion_weights(net: MfNet, i_rgb: np.ndarray, i_t: np.ndarray) -> np.ndarray:
    """W_F evaluated on whole images, upsampled back to image resolution."""
    h, w = img.to_gray(i_rgb).shape
    p_rgb = img.resize_bilinear(img.to_gray(i_rgb), (PATCH_SIZE, PATCH_SIZE))
    p_t = img.resize_bilinear(img.to_gray(i_t), (PATCH_SIZE, PATCH_SIZE))
    fw = mfnet_forward(net, p_rgb, p_t)
    return img.resize_bilinear(fw.w_f, (w, h))


def entropy(image: np.ndarray) -> float:
    """Shannon entropy in bits over a 256-bin intensity histogram."""
    g = img.to_gray(image)
    hist, _ = np.histogram(g.reshape(-1), bins=256, range=(0.0, 1.0 + 1e-12))
    p = hist / hist.sum()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """MI in bits over a 256 x 256 joint histogram."""
    ga, gb = img.to_gray(a), img.to_gray(b)
    if ga.shape != gb.shape:
        raise FusionError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    edges = np.linspace(0.0, 1.0 + 1e-12, 257)
    joint, _, _ = np.histogram2d(ga.reshape(-1), gb.reshape(-1), bins=(edges, edges))
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))


def _gaussian_kernel1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) on [0,1] data."""
    ga, gb = img.to_gray(a).astype(np.float64), img.to_gray(b).astype(np.float64)
    if ga.shape != gb.shape:
        raise FusionError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < 11:
        raise FusionError("images smaller than the 11x11 SSIM window")
    k = _gaussian_kernel1d()

    def filt(x):
        t = np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 0, x)
        return np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 1, t)

    mu_a, mu_b = filt(ga), filt(gb)
    saa = filt(ga * ga) - mu_a * mu_a
    sbb = filt(gb * gb) - mu_b * mu_b
    sab = filt(ga * gb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))
