"""Run-configuration files: flat INI sections with key=value lines.

Unknown sections or keys are rejected so typos fail loudly.  The effective
configuration (defaults resolved) is echoed into every run's output
directory for reproducibility.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ContractError
from .losses import LossHyper
from .training import (BASELINES, LOSS_FAMILIES, OptimizerConfig, Stage1Config,
                       Stage2Config, TrainConfig)

_KNOWN_KEYS = {
    "run": {"method", "loss_family", "centered", "seed"},
    "data": {"source", "preset", "holdout_fraction", "small_class_threshold"},
    "model": {"embedding_dim", "hidden", "activation"},
    "stage1": {"epochs", "m_per_class", "mining", "lambda_ce"},
    "stage2": {"epochs", "batch_size", "center_mode", "center_init", "alpha", "lr",
               "refresh_each_epoch", "freeze_layers", "final_centers"},
    "hyper": {"alpha", "beta", "p_norm"},
    "optimizer": {"lr", "beta1", "beta2", "epsilon"},
    "baseline": {"epochs", "batch_size", "focal_gamma"},
    "eval": {"k_folds"},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str, where: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ContractError(f"{where}: expected a boolean, got {text!r}")


@dataclass
class RunSettings:
    """Everything a CLI run needs: the train config plus data and eval options."""

    train: TrainConfig
    data_source: str | None = None  # csv path
    data_preset: str | None = None
    holdout_fraction: float = 0.2
    small_class_threshold: int = 20
    k_folds: int = 5

    def validate(self):
        self.train.validate()
        if self.data_source is None and self.data_preset is None:
            raise ContractError("config needs [data] source=<csv> or preset=<name>")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ContractError("holdout_fraction must be in [0, 1)")
        if self.small_class_threshold < 1:
            raise ContractError("small_class_threshold must be >= 1")
        if self.k_folds < 2:
            raise ContractError("k_folds must be >= 2")


def _reject_unknown(parser: configparser.ConfigParser, path):
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ContractError(f"{path}: unknown config section [{section}]")
        unknown = set(parser[section]) - _KNOWN_KEYS[section]
        if unknown:
            raise ContractError(
                f"{path}: unknown key(s) {sorted(unknown)} in section [{section}]")


def load_settings(path) -> RunSettings:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ContractError(f"config file {path} not found")
    _reject_unknown(parser, path)

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ContractError:
                raise
            except ValueError:
                raise ContractError(f"{path}: [{section}] {key}={raw!r} is not a valid value")
        return default

    boolean = lambda raw: _parse_bool(raw, path)
    hidden = get("model", "hidden", lambda s: tuple(int(x) for x in s.split(",") if x.strip()), (64, 64))
    optional_float = lambda raw: float(raw)

    train = TrainConfig(
        method=get("run", "method", str, "two_stage"),
        loss_family=get("run", "loss_family", str, "triplet"),
        centered=get("run", "centered", boolean, True),
        seed=get("run", "seed", int, 0),
        embedding_dim=get("model", "embedding_dim", int, 128),
        hidden=hidden,
        activation=get("model", "activation", str, "tanh"),
        stage1=Stage1Config(
            epochs=get("stage1", "epochs", int, 200),
            m_per_class=get("stage1", "m_per_class", int, 10),
            mining=get("stage1", "mining", str, "random_hard"),
            lambda_ce=get("stage1", "lambda_ce", float, 0.0),
        ),
        stage2=Stage2Config(
            epochs=get("stage2", "epochs", int, 200),
            batch_size=get("stage2", "batch_size", int, 16),
            center_mode=get("stage2", "center_mode", str, "computed"),
            center_init=get("stage2", "center_init", str, "from_computed"),
            alpha=get("stage2", "alpha", optional_float, None),
            lr=get("stage2", "lr", optional_float, None),
            refresh_each_epoch=get("stage2", "refresh_each_epoch", boolean, True),
            freeze_layers=get("stage2", "freeze_layers", int, 0),
            final_centers=get("stage2", "final_centers", str, "default"),
        ),
        hyper=LossHyper(
            alpha=get("hyper", "alpha", float, 0.5),
            beta=get("hyper", "beta", float, 0.25),
            p_norm=get("hyper", "p_norm", int, 2),
        ),
        optimizer=OptimizerConfig(
            lr=get("optimizer", "lr", float, 1e-4),
            beta1=get("optimizer", "beta1", float, 0.9),
            beta2=get("optimizer", "beta2", float, 0.99),
            epsilon=get("optimizer", "epsilon", float, 1e-8),
        ),
        focal_gamma=get("baseline", "focal_gamma", float, 2.0),
        baseline_epochs=get("baseline", "epochs", int, None),
        baseline_batch_size=get("baseline", "batch_size", int, 32),
    )
    if train.hyper.beta < 0:
        raise ContractError(f"{path}: [hyper] beta must be >= 0")
    settings = RunSettings(
        train=train,
        data_source=get("data", "source", str, None),
        data_preset=get("data", "preset", str, None),
        holdout_fraction=get("data", "holdout_fraction", float, 0.2),
        small_class_threshold=get("data", "small_class_threshold", int, 20),
        k_folds=get("eval", "k_folds", int, 5),
    )
    settings.validate()
    return settings


def echo_settings(settings: RunSettings) -> str:
    """Render the fully resolved configuration, suitable for re-loading."""
    t = settings.train
    lines = [
        "[run]",
        f"method = {t.method}",
        f"loss_family = {t.loss_family}",
        f"centered = {str(t.centered).lower()}",
        f"seed = {t.seed}",
        "",
        "[data]",
    ]
    if settings.data_source is not None:
        lines.append(f"source = {settings.data_source}")
    if settings.data_preset is not None:
        lines.append(f"preset = {settings.data_preset}")
    lines += [
        f"holdout_fraction = {settings.holdout_fraction}",
        f"small_class_threshold = {settings.small_class_threshold}",
        "",
        "[model]",
        f"embedding_dim = {t.embedding_dim}",
        f"hidden = {','.join(str(h) for h in t.hidden)}",
        f"activation = {t.activation}",
        "",
        "[stage1]",
        f"epochs = {t.stage1.epochs}",
        f"m_per_class = {t.stage1.m_per_class}",
        f"mining = {t.stage1.mining}",
        f"lambda_ce = {t.stage1.lambda_ce}",
        "",
        "[stage2]",
        f"epochs = {t.stage2.epochs}",
        f"batch_size = {t.stage2.batch_size}",
        f"center_mode = {t.stage2.center_mode}",
        f"center_init = {t.stage2.center_init}",
    ]
    if t.stage2.alpha is not None:
        lines.append(f"alpha = {t.stage2.alpha}")
    if t.stage2.lr is not None:
        lines.append(f"lr = {t.stage2.lr}")
    lines += [
        f"refresh_each_epoch = {str(t.stage2.refresh_each_epoch).lower()}",
        f"freeze_layers = {t.stage2.freeze_layers}",
        f"final_centers = {t.stage2.final_centers}",
        "",
        "[hyper]",
        f"alpha = {t.hyper.alpha}",
        f"beta = {t.hyper.beta}",
        f"p_norm = {t.hyper.p_norm}",
        "",
        "[optimizer]",
        f"lr = {t.optimizer.lr}",
        f"beta1 = {t.optimizer.beta1}",
        f"beta2 = {t.optimizer.beta2}",
        f"epsilon = {t.optimizer.epsilon}",
        "",
        "[baseline]",
    ]
    if t.baseline_epochs is not None:
        lines.append(f"epochs = {t.baseline_epochs}")
    lines += [
        f"batch_size = {t.baseline_batch_size}",
        f"focal_gamma = {t.focal_gamma}",
        "",
        "[eval]",
        f"k_folds = {settings.k_folds}",
        "",
    ]
    return "\n".join(lines)
