"""Conditional VAE over spectral trajectory fields, plus the z-free regressor.

Three dense towers stand in for the convolutional ones:

* image tower: scene features -> image code (ReLU features)
* encoder tower: [image code, normalized target, magnitudes] -> (mu', log sigma')
* decoder tower: fused(image code, z) -> normalized direction and two magnitudes

The encoder is only touched by the training loss; sampling at test time
draws z from N(0, I) and runs image tower + decoder.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.special import expit

from .codec import (
    SpectralField,
    TrajectoryField,
    decode_field,
    encode_field,
    recombine_vectors,
    spectral_to_vector,
    split_normalize,
    vector_to_spectral,
)
from .nn import LayerSpec, Network, ParamStore, backward, forward, init_params, mlp

MODEL_KINDS = ("cvae", "regressor")
Z_PROJ = "z_proj.weight"  # (code_dim, latent_dim)
Z_BIAS = "z_proj.bias"  # (code_dim,), only with z_bias; zero at init


@dataclass(frozen=True)
class CvaeConfig:
    height: int = 16
    width: int = 20
    n_coeffs: int = 5
    n_features: int = 3
    latent_dim: int = 8
    code_dim: int = 128
    image_hidden: tuple = (256,)
    encoder_hidden: tuple = (256,)
    decoder_hidden: tuple = (512,)
    fusion: str = "gate"  # "gate": c * (1 + zb), "add": c + zb
    z_broadcast: str = "tile"  # zb = z replicated across the code, or "linear": zb = A z
    z_bias: bool = False  # linear broadcast only: zb = A z + b
    split_trunks: bool = False
    kl_weight: float = 1.0
    init: str = "glorot"

    def __post_init__(self):
        object.__setattr__(self, "image_hidden", tuple(self.image_hidden))
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(self.decoder_hidden))
        if self.latent_dim < 0:
            raise ValueError("latent_dim must be >= 0")
        if self.z_broadcast not in ("tile", "linear"):
            raise ValueError(f"unknown z_broadcast {self.z_broadcast!r}")
        if self.z_bias and self.z_broadcast != "linear":
            raise ValueError("z_bias needs the linear z broadcast")
        if self.z_broadcast == "tile" and self.latent_dim and self.code_dim % self.latent_dim:
            raise ValueError("code_dim must be a multiple of latent_dim so z can be replicated")
        if self.fusion not in ("gate", "add"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if min(self.height, self.width, self.n_coeffs, self.n_features, self.code_dim) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def input_dim(self) -> int:
        return self.height * self.width * self.n_features

    @property
    def direction_dim(self) -> int:
        return 2 * self.n_coeffs * self.height * self.width

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("image_hidden", "encoder_hidden", "decoder_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CvaeConfig":
        return cls(**d)


def networks(cfg: CvaeConfig, kind: str = "cvae") -> dict[str, Network]:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    nets = {
        "image": mlp("image", [cfg.input_dim, *cfg.image_hidden, cfg.code_dim], final_activation="relu"),
    }
    if kind == "cvae" and cfg.latent_dim > 0:
        enc_in = cfg.code_dim + cfg.direction_dim + 2
        nets["encoder"] = mlp("encoder", [enc_in, *cfg.encoder_hidden], final_activation="relu")
        enc_out = cfg.encoder_hidden[-1] if cfg.encoder_hidden else enc_in
        nets["enc_mu"] = Network("enc_mu", (LayerSpec("affine", enc_out, cfg.latent_dim),))
        nets["enc_logsigma"] = Network("enc_logsigma", (LayerSpec("affine", enc_out, cfg.latent_dim),))
    trunk_dims = [cfg.code_dim, *cfg.decoder_hidden]
    trunk_out = trunk_dims[-1]
    nets["decoder"] = mlp("decoder", trunk_dims, final_activation="relu") if cfg.decoder_hidden else None
    if cfg.split_trunks and cfg.decoder_hidden:
        nets["decoder_mag"] = mlp("decoder_mag", trunk_dims, final_activation="relu")
    nets["dir_head"] = Network("dir_head", (LayerSpec("affine", trunk_out, cfg.direction_dim),))
    nets["mag_head"] = Network("mag_head", (LayerSpec("affine", trunk_out, 2),))
    return {k: v for k, v in nets.items() if v is not None}


def init_model(cfg: CvaeConfig, kind: str = "cvae", seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for name, net in networks(cfg, kind).items():
        params.update(init_params(net, rng, cfg.init))
        if name == "enc_logsigma" and uses_projection(cfg, kind):
            proj = init_params(Network("p", (LayerSpec("affine", cfg.latent_dim, cfg.code_dim),)), rng, cfg.init)
            params[Z_PROJ] = proj["p.0.weight"]
            if cfg.z_bias:
                params[Z_BIAS] = np.zeros(cfg.code_dim)
    return params


def uses_projection(cfg: CvaeConfig, kind: str = "cvae") -> bool:
    return kind == "cvae" and cfg.latent_dim > 0 and cfg.z_broadcast == "linear"


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


@dataclass
class Prediction:
    """Normalized direction vectors (..., D) and magnitudes (..., 2)."""

    direction: np.ndarray
    mags: np.ndarray

    def __len__(self) -> int:
        return 1 if self.direction.ndim == 1 else self.direction.shape[0]

    def __getitem__(self, i) -> "Prediction":
        return Prediction(self.direction[i], self.mags[i])

    def spectral_vectors(self, n_coeffs: int) -> np.ndarray:
        return recombine_vectors(self.direction, self.mags, n_coeffs)

    def to_spectral(self, cfg: CvaeConfig) -> SpectralField:
        vec = self.spectral_vectors(cfg.n_coeffs)
        return SpectralField(vector_to_spectral(vec, cfg.height, cfg.width, cfg.n_coeffs))

    def to_trajectory(self, cfg: CvaeConfig, horizon: int = 30) -> TrajectoryField:
        return decode_field(self.to_spectral(cfg), horizon)


def _flat_features(cfg: CvaeConfig, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-3:] == (cfg.height, cfg.width, cfg.n_features):
        X = X.reshape(*X.shape[:-3], cfg.input_dim)
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"features have {X.shape[-1]} values, expected {cfg.input_dim}")
    return X


def encode_targets(trajectories, n_coeffs: int) -> tuple[np.ndarray, np.ndarray]:
    """Trajectory fields -> (normalized direction vectors, magnitude pairs)."""
    dirs, mags = [], []
    for traj in trajectories:
        ns = split_normalize(encode_field(traj, n_coeffs))
        dirs.append(ns.direction.to_vector())
        mags.append(ns.mags)
    return np.array(dirs), np.array(mags)


def image_tower(params: ParamStore, cfg: CvaeConfig, X) -> np.ndarray:
    code, _ = forward(networks(cfg, "regressor")["image"], params, _flat_features(cfg, X))
    return code




def _broadcast_z(params: ParamStore, cfg: CvaeConfig, z: np.ndarray) -> np.ndarray:
    """Spread z over the image code: replication, or a learned linear map."""
    if cfg.z_broadcast == "tile":
        return np.tile(z, cfg.code_dim // cfg.latent_dim)
    zb = z @ params[Z_PROJ].T
    return zb + params[Z_BIAS] if cfg.z_bias else zb


def _fuse(params: ParamStore, cfg: CvaeConfig, code: np.ndarray, z) -> np.ndarray:
    if z is None or cfg.latent_dim == 0:
        return code
    zb = _broadcast_z(params, cfg, np.asarray(z, dtype=np.float64))
    if cfg.fusion == "gate":
        return code * (1.0 + zb)
    return code + zb


def _encode_input(code, y_dir, y_mag) -> np.ndarray:
    return np.concatenate([code, np.asarray(y_dir, dtype=np.float64), np.asarray(y_mag, dtype=np.float64)], axis=-1)


def encode(params: ParamStore, cfg: CvaeConfig, image_code, y_dir, y_mag) -> GaussianPosterior:
    if cfg.latent_dim == 0:
        raise ValueError("model has no latent variables")
    nets = networks(cfg, "cvae")
    y_dir = np.asarray(y_dir, dtype=np.float64)
    if y_dir.shape[-1] != cfg.direction_dim or np.shape(y_mag)[-1] != 2:
        raise ValueError("target dims do not match config")
    h, _ = forward(nets["encoder"], params, _encode_input(image_code, y_dir, y_mag))
    mu, _ = forward(nets["enc_mu"], params, h)
    ls, _ = forward(nets["enc_logsigma"], params, h)
    return GaussianPosterior(mu, ls)


def reparameterize(post: GaussianPosterior, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape[-1] != post.mu.shape[-1]:
        raise ValueError("eta must have latent_dim entries")
    return post.mu + eta * post.sigma


def _softplus(a):
    return np.logaddexp(0.0, a)


def _decode_heads(params, cfg, nets, fused):
    if "decoder" in nets:
        h_dir, tape_trunk = forward(nets["decoder"], params, fused)
    else:
        h_dir, tape_trunk = fused, None
    if "decoder_mag" in nets:
        h_mag, tape_mag_trunk = forward(nets["decoder_mag"], params, fused)
    else:
        h_mag, tape_mag_trunk = h_dir, None
    direction, tape_dir = forward(nets["dir_head"], params, h_dir)
    mag_pre, tape_mag = forward(nets["mag_head"], params, h_mag)
    return direction, mag_pre, (tape_trunk, tape_mag_trunk, tape_dir, tape_mag)


def decode(params: ParamStore, cfg: CvaeConfig, image_code, z=None) -> Prediction:
    """Decode from the image code; ``z=None`` skips the fusion and decodes the code as is."""
    nets = networks(cfg, "regressor")
    if z is not None and np.shape(z)[-1] != cfg.latent_dim:
        raise ValueError(f"z must have {cfg.latent_dim} entries")
    fused = _fuse(params, cfg, np.asarray(image_code, dtype=np.float64), z)
    direction, mag_pre, _ = _decode_heads(params, cfg, nets, fused)
    return Prediction(direction, _softplus(mag_pre))


def kl_std_normal(post: GaussianPosterior) -> np.ndarray:
    """KL[N(mu, sigma^2) || N(0, I)], summed over the last axis."""
    mu, ls = np.asarray(post.mu), np.asarray(post.log_sigma)
    return 0.5 * np.sum(mu**2 + np.expm1(2 * ls) - 2.0 * ls, axis=-1)


def regressor_forward(params: ParamStore, cfg: CvaeConfig, X) -> Prediction:
    return decode(params, cfg, image_tower(params, cfg, X), None)


def loss_and_grad(
    params: ParamStore,
    cfg: CvaeConfig,
    X,
    y_dir,
    y_mag,
    eta=None,
    kind: str = "cvae",
    kl_weight: float | None = None,
    need_grad: bool = True,
):
    """Batch-mean loss, per-term means, and the gradient of the mean loss.

    Per-sample loss is ||y_dir - dir_hat||^2 + (Mx - Mx_hat)^2 + (My - My_hat)^2
    + kl_weight * KL. The regressor drops the KL term and the z-fusion.
    """
    kl_weight = cfg.kl_weight if kl_weight is None else kl_weight
    nets = networks(cfg, kind)
    X = _flat_features(cfg, X)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    y_dir = np.atleast_2d(np.asarray(y_dir, dtype=np.float64))
    y_mag = np.atleast_2d(np.asarray(y_mag, dtype=np.float64))
    B = X.shape[0]
    use_latent = kind == "cvae" and cfg.latent_dim > 0

    code, tape_img = forward(nets["image"], params, X)
    if use_latent:
        if eta is None:
            raise ValueError("cvae loss needs an eta draw")
        eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
        h_enc, tape_enc = forward(nets["encoder"], params, _encode_input(code, y_dir, y_mag))
        mu, tape_mu = forward(nets["enc_mu"], params, h_enc)
        ls, tape_ls = forward(nets["enc_logsigma"], params, h_enc)
        sigma = np.exp(ls)
        z = mu + eta * sigma
        fused = _fuse(params, cfg, code, z)
        kl = 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * ls, axis=1)
    else:
        fused = code
        kl = np.zeros(B)

    direction, mag_pre, (tape_trunk, tape_mag_trunk, tape_dir, tape_mag) = _decode_heads(params, cfg, nets, fused)
    mags = _softplus(mag_pre)
    r_dir = direction - y_dir
    r_mag = mags - y_mag
    term_dir = np.sum(r_dir**2, axis=1)
    term_mx = r_mag[:, 0] ** 2
    term_my = r_mag[:, 1] ** 2
    per_sample = term_dir + term_mx + term_my + kl_weight * kl
    terms = {
        "total": float(per_sample.mean()),
        "dir": float(term_dir.mean()),
        "mag_x": float(term_mx.mean()),
        "mag_y": float(term_my.mean()),
        "kl": float(kl.mean()),
    }
    if not need_grad:
        return terms["total"], terms, per_sample

    scale = 1.0 / B
    grads = ParamStore()
    g_dir_out = 2.0 * r_dir * scale
    g_mag_pre = 2.0 * r_mag * expit(mag_pre) * scale
    gd, g_hdir = backward(nets["dir_head"], params, tape_dir, g_dir_out)
    gm, g_hmag = backward(nets["mag_head"], params, tape_mag, g_mag_pre)
    grads.update(gd)
    grads.update(gm)
    if "decoder_mag" in nets:
        gdm, g_fused_mag = backward(nets["decoder_mag"], params, tape_mag_trunk, g_hmag)
        g_trunk_out = g_hdir
    else:
        g_fused_mag = 0.0
        g_trunk_out = g_hdir + g_hmag
    if "decoder" in nets:
        gtr, g_fused = backward(nets["decoder"], params, tape_trunk, g_trunk_out)
        grads.update(gtr)
    else:
        g_fused = g_trunk_out
    if "decoder_mag" in nets:
        grads.update(gdm)
    g_fused = g_fused + g_fused_mag

    if use_latent:
        zb = _broadcast_z(params, cfg, z)
        g_code = g_fused * (1.0 + zb) if cfg.fusion == "gate" else g_fused
        g_zb = g_fused * code if cfg.fusion == "gate" else g_fused
        if cfg.z_broadcast == "tile":
            g_z = g_zb.reshape(B, -1, cfg.latent_dim).sum(axis=1)
        else:
            grads[Z_PROJ] = g_zb.T @ z
            if cfg.z_bias:
                grads[Z_BIAS] = g_zb.sum(axis=0)
            g_z = g_zb @ params[Z_PROJ]
        g_mu = g_z + kl_weight * mu * scale
        g_ls = g_z * eta * sigma + kl_weight * (sigma**2 - 1.0) * scale
        gmu, g_h1 = backward(nets["enc_mu"], params, tape_mu, g_mu)
        gls, g_h2 = backward(nets["enc_logsigma"], params, tape_ls, g_ls)
        genc, g_enc_in = backward(nets["encoder"], params, tape_enc, g_h1 + g_h2)
        grads.update(genc)
        grads.update(gmu)
        grads.update(gls)
        g_code = g_code + g_enc_in[:, : cfg.code_dim]
    else:
        g_code = g_fused
    gimg, _ = backward(nets["image"], params, tape_img, g_code)
    grads.update(gimg)

    ordered = ParamStore({k: grads[k] for k in params.keys()})
    if single:
        per_sample = per_sample[0]
    return terms["total"], terms, ordered


def loss(params: ParamStore, cfg: CvaeConfig, X, y_dir, y_mag, eta=None, kind: str = "cvae"):
    """Scalar loss and per-term breakdown for one sample or a batch (batch mean)."""
    total, terms, _ = loss_and_grad(params, cfg, X, y_dir, y_mag, eta, kind=kind, need_grad=False)
    return total, terms


def sample_predictions(params: ParamStore, cfg: CvaeConfig, X, n: int, rng_seed=0) -> Prediction:
    """``n`` decodes of one scene with z ~ N(0, I); never touches the encoder."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    code = image_tower(params, cfg, X)
    z = rng.standard_normal((n, cfg.latent_dim))
    return decode(params, cfg, np.broadcast_to(code, (n, cfg.code_dim)), z)


def latent_interpolate(params: ParamStore, cfg: CvaeConfig, X, z_a, z_b, steps: int) -> Prediction:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    t = np.linspace(0.0, 1.0, steps)[:, None]
    z = (1.0 - t) * np.asarray(z_a, dtype=np.float64) + t * np.asarray(z_b, dtype=np.float64)
    code = image_tower(params, cfg, X)
    return decode(params, cfg, np.broadcast_to(code, (steps, cfg.code_dim)), z)


def posterior_of(params: ParamStore, cfg: CvaeConfig, X, traj) -> GaussianPosterior:
    """Encoder posterior for one scene and its ground-truth field."""
    y_dir, y_mag = encode_targets([traj], cfg.n_coeffs)
    return encode(params, cfg, image_tower(params, cfg, X), y_dir[0], y_mag[0])


@dataclass
class Model:
    kind: str
    config: CvaeConfig
    params: ParamStore
    meta: dict = field(default_factory=dict)
