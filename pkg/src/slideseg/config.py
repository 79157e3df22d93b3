"""Flat key = value config files.

One assignment per line, UTF-8, `#` starts a comment. Errors carry the
1-based line number so the CLI can point at the offending line.
"""

from .data import AugmentConfig
from .losses import LossSpec, SsimConfig
from .network import NetworkConfig


class ConfigError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class Config:
    def __init__(self, values, key_lines):
        self.values = values
        self.key_lines = key_lines

    def line_of(self, key):
        return self.key_lines.get(key, 0)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _typed(self, key, default, conv, kind):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(self.line_of(key), f"{key}: expected {kind}, got {raw!r}") from exc

    def get_int(self, key, default=None):
        return self._typed(key, default, int, "an integer")

    def get_float(self, key, default=None):
        return self._typed(key, default, float, "a number")

    def get_bool(self, key, default=None):
        def conv(raw):
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(raw)

        return self._typed(key, default, conv, "on/off")

    def check_known(self, known):
        for key in self.values:
            if key not in known:
                raise ConfigError(self.line_of(key), f"unknown key {key!r}")


def parse_config(text):
    values = {}
    key_lines = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(lineno, "empty key")
        if not value:
            raise ConfigError(lineno, f"{key}: empty value")
        if key in values:
            raise ConfigError(lineno, f"duplicate key {key!r} (first set on line {key_lines[key]})")
        values[key] = value
        key_lines[key] = lineno
    return Config(values, key_lines)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(0, f"cannot read {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(0, f"{path} is not UTF-8: {exc}") from exc


NETWORK_KEYS = {
    "input_size",
    "depth",
    "width",
    "skips",
    "block",
    "attention",
    "fusion",
    "n_scales",
}
TRAIN_KEYS = {
    "lr",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "decay_epochs",
    "decay_rate",
    "batch_size",
    "seed",
    "loss",
    "augment",
    "grad_clip",
    "ssim_window",
    "ssim_scales",
}
ALL_KEYS = NETWORK_KEYS | TRAIN_KEYS


def _parse_size(cfg):
    raw = cfg.get("input_size", "64")
    parts = raw.lower().split("x")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return (n, n)
        if len(parts) == 2:
            return (int(parts[0]), int(parts[1]))
    except ValueError:
        pass
    raise ConfigError(cfg.line_of("input_size"), f"input_size: expected N or HxW, got {raw!r}")


def network_config_from(cfg):
    """Build a NetworkConfig from config keys, defaulting sensibly."""
    kwargs = dict(
        input_size=_parse_size(cfg),
        depth=cfg.get_int("depth", 3),
        width=cfg.get_int("width", 8),
        block_kind=cfg.get("block", "basic"),
        attention=cfg.get("attention", "none"),
        fusion=cfg.get("fusion", "single"),
        n_scales=cfg.get_int("n_scales", 1),
    )
    raw_skips = cfg.get("skips")
    if raw_skips is not None:
        kwargs["skip_set"] = tuple(s.strip() for s in raw_skips.split(",") if s.strip())
    try:
        return NetworkConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(0, f"invalid network settings: {exc}") from exc


def train_config_from(cfg):
    from .train import TrainConfig

    raw_loss = cfg.get("loss", "ce")
    try:
        loss = LossSpec.parse(raw_loss)
    except ValueError as exc:
        raise ConfigError(cfg.line_of("loss"), f"loss: {exc}") from exc
    augment = AugmentConfig() if cfg.get_bool("augment", True) else AugmentConfig(p=0.0)
    try:
        ssim = SsimConfig(
            K=cfg.get_int("ssim_window", 11),
            ms_scales=cfg.get_int("ssim_scales", 1),
        )
    except ValueError as exc:
        raise ConfigError(0, f"invalid ssim settings: {exc}") from exc
    try:
        return TrainConfig(
            lr=cfg.get_float("lr", 1e-4),
            beta1=cfg.get_float("beta1", 0.5),
            beta2=cfg.get_float("beta2", 0.999),
            eps=cfg.get_float("eps", 1e-8),
            epochs=cfg.get_int("epochs", 100),
            decay_epochs=cfg.get_int("decay_epochs", 10),
            decay_rate=cfg.get_float("decay_rate", 0.1),
            batch_size=cfg.get_int("batch_size", 2),
            seed=cfg.get_int("seed", 0),
            loss=loss,
            augment=augment,
            ssim=ssim,
            grad_clip=cfg.get_float("grad_clip"),
        )
    except ValueError as exc:
        raise ConfigError(0, f"invalid training settings: {exc}") from exc
