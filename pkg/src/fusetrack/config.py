"""TOML configuration: every tunable of the tracker, validated on load.

The `[paper]` section carries the published constants so any deviation is
visible in a config diff; the remaining sections hold the reference-tracker
knobs. Unknown keys are rejected.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cftrack import CfConfig
from .cme import CmeConfig
from .fusion import TrainSchedule
from .geom import MotionModel
from .pipeline import PipelineConfig, SwitcherThresholds


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "paper": {
        # switcher thresholds and motion-tracker constants as published
        "q_hi": 210.0, "s_hi": 15.0, "q_low": 135.0, "s_low": 17.0,
        "t_diff": 3.0, "t_disable": 5.0, "q_skip": 250.0,
        "kf_position_noise": 25.0, "kf_velocity_noise": 10.0,
        "kf_measurement_noise": 25.0,
        "train_lr": 1e-5, "train_lr_joint": 1e-7,
        "train_momentum": 0.9, "train_weight_decay": 5e-4, "train_batch": 8,
        "patch_size": 200,
    },
    "cf": {
        "padding": 2.0, "lam": 1e-2, "eta": 0.02, "n_scales": 5,
        "scale_step": 1.02, "sigma_factor": 0.1, "cell": 4, "orientations": 9,
    },
    "cme": {
        "max_keypoints": 400, "harris_k": 0.04, "ratio_thresh": 0.8,
        "msac_iters": 500, "msac_tau": 3.0, "pixel_thresh": 0.1,
        "ratio_gate": 0.05, "drastic_frac": 0.2, "model": "affine", "seed": 7,
    },
    "pipeline": {
        "enable_cme": True, "enable_tmp": True, "enable_refinement": False,
        "modality": "fused", "seed": 0,
        # calibrated=true swaps in the reference-tracker threshold band
        "calibrated": False,
    },
    "train": {
        "epochs_global": 10, "epochs_local": 10, "epochs_joint": 5, "seed": 0,
        # learning-rate override for desk-scale datasets; 0 = use paper rates
        "lr_override": 0.0,
    },
    "metrics": {
        "pr_threshold": 20.0,
    },
}

REFERENCE_THRESHOLDS = {
    "q_hi": 90.0, "s_hi": 4.0, "q_low": 55.0, "s_low": 4.5,
    "t_diff": 1.0, "t_disable": 1.5, "q_skip": 160.0,
}


@dataclass
class Config:
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: dict(v) for k, v in DEFAULTS.items()}
        for section, values in self.raw.items():
            if section not in merged:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, val in values.items():
                if key not in merged[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
                merged[section][key] = val
        self.data = merged
        self.pipeline_config()  # validate eagerly
        self.train_schedule()

    def thresholds(self) -> SwitcherThresholds:
        p = self.data["paper"]
        kw = {k: float(p[k]) for k in
              ("q_hi", "s_hi", "q_low", "s_low", "t_diff", "t_disable", "q_skip")}
        if self.data["pipeline"]["calibrated"]:
            kw = dict(REFERENCE_THRESHOLDS)
        try:
            return SwitcherThresholds(**kw)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def cf_config(self) -> CfConfig:
        c = self.data["cf"]
        if self.data["pipeline"]["calibrated"]:
            c = dict(c, padding=max(float(c["padding"]), 3.0))
        cfg = CfConfig(padding=float(c["padding"]), lam=float(c["lam"]),
                       eta=float(c["eta"]), n_scales=int(c["n_scales"]),
                       scale_step=float(c["scale_step"]),
                       sigma_factor=float(c["sigma_factor"]),
                       cell=int(c["cell"]), orientations=int(c["orientations"]))
        if cfg.padding <= 1.0 or cfg.lam <= 0 or not 0 <= cfg.eta <= 1 \
                or cfg.n_scales < 1 or cfg.scale_step <= 1.0 or cfg.cell < 1:
            raise ConfigError("invalid [cf] values")
        return cfg

    def cme_config(self) -> CmeConfig:
        c = self.data["cme"]
        try:
            model = MotionModel(c["model"])
        except ValueError as e:
            raise ConfigError(f"unknown camera model {c['model']!r}") from e
        return CmeConfig(max_keypoints=int(c["max_keypoints"]),
                         harris_k=float(c["harris_k"]),
                         ratio_thresh=float(c["ratio_thresh"]),
                         msac_iters=int(c["msac_iters"]),
                         msac_tau=float(c["msac_tau"]),
                         pixel_thresh=float(c["pixel_thresh"]),
                         ratio_gate=float(c["ratio_gate"]),
                         drastic_frac=float(c["drastic_frac"]),
                         model=model, seed=int(c["seed"]))

    def pipeline_config(self) -> PipelineConfig:
        p = self.data["pipeline"]
        if p["modality"] not in ("fused", "rgb", "t"):
            raise ConfigError(f"modality must be fused|rgb|t, got {p['modality']!r}")
        return PipelineConfig(cf=self.cf_config(), cme=self.cme_config(),
                              thresholds=self.thresholds(),
                              enable_cme=bool(p["enable_cme"]),
                              enable_tmp=bool(p["enable_tmp"]),
                              enable_refinement=bool(p["enable_refinement"]),
                              modality=p["modality"],
                              camera_model=self.cme_config().model,
                              seed=int(p["seed"]))

    def train_schedule(self) -> TrainSchedule:
        t, p = self.data["train"], self.data["paper"]
        lr = float(t["lr_override"]) or float(p["train_lr"])
        lr_joint = float(t["lr_override"]) or float(p["train_lr_joint"])
        sched = TrainSchedule(epochs_global=int(t["epochs_global"]),
                              epochs_local=int(t["epochs_local"]),
                              epochs_joint=int(t["epochs_joint"]),
                              lr=lr, lr_joint=lr_joint,
                              batch_size=int(p["train_batch"]),
                              momentum=float(p["train_momentum"]),
                              weight_decay=float(p["train_weight_decay"]),
                              seed=int(t["seed"]))
        if sched.batch_size < 1 or min(sched.epochs_global, sched.epochs_local,
                                       sched.epochs_joint) < 0:
            raise ConfigError("invalid [train] values")
        return sched

    def pr_threshold(self) -> float:
        return float(self.data["metrics"]["pr_threshold"])


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}")
    return Config(raw)


def print_config(cfg: Config) -> str:
    lines = []
    for section, values in cfg.data.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            if isinstance(v, bool):
                lines.append(f"{k} = {str(v).lower()}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
