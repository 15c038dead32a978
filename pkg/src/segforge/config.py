"""Flat key=value run configuration shared by every CLI command.

Files are UTF-8 text, one ``key = value`` per line, ``#`` starts a comment.
Keys are dotted per subsystem; unknown keys are rejected so typos fail fast.
Every key has a documented default (see SCHEMA below / the README table).
"""

from __future__ import annotations

from . import augment, losses, model, phantom, postprocess, preprocess, trainer


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _pos_weight(text: str):
    return None if text.strip().lower() == "auto" else float(text)


# key -> (parser, default)
SCHEMA = {
    "preprocess.clip_lo": (float, preprocess.DEFAULT_CLIP_LO),
    "preprocess.clip_hi": (float, preprocess.DEFAULT_CLIP_HI),
    "preprocess.normalize": (str, "minmax"),
    "preprocess.size": (int, preprocess.DEFAULT_SIZE),
    "preprocess.mask_threshold": (float, 0.5),
    "histogram.lo": (float, -1000.0),
    "histogram.hi": (float, 1500.0),
    "histogram.bin_width": (float, 50.0),
    "augment.rot_max_deg": (float, 5.0),
    "augment.translate_max_frac": (float, 0.05),
    "augment.scale_lo": (float, 0.95),
    "augment.scale_hi": (float, 1.05),
    "augment.elastic_alpha": (float, 2.0),
    "augment.elastic_sigma": (float, 8.0),
    "augment.blur_sigma_lo": (float, 0.0),
    "augment.blur_sigma_hi": (float, 1.5),
    "augment.brightness_delta_max": (float, 0.1),
    "augment.contrast_lo": (float, 0.9),
    "augment.contrast_hi": (float, 1.1),
    "augment.prob_rotate": (float, 0.5),
    "augment.prob_translate": (float, 0.5),
    "augment.prob_scale": (float, 0.5),
    "augment.prob_elastic": (float, 0.25),
    "augment.prob_blur": (float, 0.25),
    "augment.prob_brightness_contrast": (float, 0.25),
    "augment.seed": (int, 0),
    "model.depth": (int, 3),
    "model.base_channels": (int, 8),
    "model.attention": (_bool, True),
    "model.init_seed": (int, 0),
    "train.lr0": (float, 1e-4),
    "train.lr_min": (float, 1e-6),
    "train.batch_size": (int, 16),
    "train.max_epochs": (int, 25),
    "train.patience": (int, 5),
    "train.val_fraction": (float, 0.2),
    "train.test_fraction": (float, 0.2),
    "train.loss": (str, "bce_dice"),
    "train.seed": (int, 0),
    "loss.bce_weight": (float, 0.5),
    "loss.pos_weight": (_pos_weight, None),
    "loss.alpha": (float, 0.5),
    "loss.eps": (float, losses.DEFAULT_EPS),
    "post.threshold": (float, 0.3),
    "post.min_component_px": (int, 10),
    "post.out_w": (int, 0),  # 0 = keep the model resolution
    "post.out_h": (int, 0),
    "phantom.nx": (int, 64),
    "phantom.ny": (int, 64),
    "phantom.nz": (int, 8),
    "phantom.lung_hu": (float, -750.0),
    "phantom.tissue_hu": (float, 40.0),
    "phantom.bone_hu": (float, 700.0),
    "phantom.infection_hu": (float, -100.0),
    "phantom.blob_count_min": (int, 1),
    "phantom.blob_count_max": (int, 3),
    "phantom.blob_radius_min": (float, 4.0),
    "phantom.blob_radius_max": (float, 10.0),
    "phantom.noise_sigma": (float, 20.0),
    "phantom.seed": (int, 0),
    "metrics.iou_hist_bins": (int, 20),
}


def default_config() -> dict:
    return {k: d for k, (_, d) in SCHEMA.items()}


def parse_config_text(text: str) -> dict:
    """Defaults overlaid with the file's assignments; unknown keys reject."""
    cfg = default_config()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return default_config()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def make_augment_config(cfg: dict, seed: int | None = None) -> augment.AugmentConfig:
    return augment.AugmentConfig(
        rot_max_deg=cfg["augment.rot_max_deg"],
        translate_max_frac=cfg["augment.translate_max_frac"],
        scale_range=(cfg["augment.scale_lo"], cfg["augment.scale_hi"]),
        elastic_alpha=cfg["augment.elastic_alpha"],
        elastic_sigma=cfg["augment.elastic_sigma"],
        blur_sigma_range=(cfg["augment.blur_sigma_lo"], cfg["augment.blur_sigma_hi"]),
        brightness_delta_max=cfg["augment.brightness_delta_max"],
        contrast_range=(cfg["augment.contrast_lo"], cfg["augment.contrast_hi"]),
        prob_rotate=cfg["augment.prob_rotate"],
        prob_translate=cfg["augment.prob_translate"],
        prob_scale=cfg["augment.prob_scale"],
        prob_elastic=cfg["augment.prob_elastic"],
        prob_blur=cfg["augment.prob_blur"],
        prob_brightness_contrast=cfg["augment.prob_brightness_contrast"],
        seed=cfg["augment.seed"] if seed is None else seed,
    )


def make_model_config(cfg: dict, size: tuple[int, int]) -> model.ModelConfig:
    """Model config for a given input size (the size comes from the data)."""
    return model.ModelConfig(
        depth=cfg["model.depth"],
        base_channels=cfg["model.base_channels"],
        input_size=size,
        attention_enabled=cfg["model.attention"],
        init_seed=cfg["model.init_seed"],
    )


def make_loss_config(cfg: dict) -> losses.LossConfig:
    return losses.LossConfig(
        bce_weight=cfg["loss.bce_weight"],
        pos_weight=cfg["loss.pos_weight"],
        alpha=cfg["loss.alpha"],
        eps=cfg["loss.eps"],
    )


def make_train_config(cfg: dict, seed: int | None = None) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        lr0=cfg["train.lr0"],
        lr_min=cfg["train.lr_min"],
        batch_size=cfg["train.batch_size"],
        max_epochs=cfg["train.max_epochs"],
        patience=cfg["train.patience"],
        val_fraction=cfg["train.val_fraction"],
        loss=cfg["train.loss"],
        loss_config=make_loss_config(cfg),
        seed=cfg["train.seed"] if seed is None else seed,
    )


def make_postprocess_config(cfg: dict) -> postprocess.PostprocessConfig:
    return postprocess.PostprocessConfig(
        threshold=cfg["post.threshold"],
        min_component_px=cfg["post.min_component_px"],
    )


def make_phantom_config(cfg: dict, seed: int | None = None) -> phantom.PhantomConfig:
    return phantom.PhantomConfig(
        dims=(cfg["phantom.nx"], cfg["phantom.ny"], cfg["phantom.nz"]),
        lung_hu=cfg["phantom.lung_hu"],
        tissue_hu=cfg["phantom.tissue_hu"],
        bone_hu=cfg["phantom.bone_hu"],
        infection_hu=cfg["phantom.infection_hu"],
        blob_count_range=(cfg["phantom.blob_count_min"], cfg["phantom.blob_count_max"]),
        blob_radius_range=(cfg["phantom.blob_radius_min"], cfg["phantom.blob_radius_max"]),
        noise_sigma=cfg["phantom.noise_sigma"],
        seed=cfg["phantom.seed"] if seed is None else seed,
    )
