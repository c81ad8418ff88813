"""Run configuration: a flat document persisted as JSON or TOML."""

import hashlib
import json
import logging
import tomllib
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from facelab.augmentation import MODES, AugmentPlan
from facelab.errors import ConfigurationError
from facelab.face import ModelSpec
from facelab.losses import LossWeights
from facelab.networks import EncoderConfig, TranslatorConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _opt(default, description: str, published=None):
    """Dataclass field carrying a description and, where published, the reference default."""
    metadata = {"description": description}
    if published is not None:
        metadata["paper_default"] = published
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda: json.loads(json.dumps(default)), metadata=metadata)
    return field(default=default, metadata=metadata)


@dataclass
class TrainConfig:
    """Every knob of a run: model, networks, losses, schedules, masking, augmentation."""

    profile: str = _opt("desk", "Size profile the values were derived from (tiny | desk | full)")
    seed: int = _opt(0, "Master RNG seed")

    # Data
    image_size: int = _opt(128, "Square image side in pixels, divisible by 8")
    dataset_size: int = _opt(512, "Samples generated by generate-data")
    split_val: float = _opt(0.1, "Validation fraction")
    split_test: float = _opt(0.1, "Test fraction")
    dataset_mix: dict[str, float] = _opt(
        {"synthetic": 1.0}, "Shard name -> fraction of every training batch", published={"ffhq": 0.5, "celeba": 0.4, "lrs3_mead": 0.1}
    )

    # Morphable model
    model_n_side: int = _opt(33, "Grid side of the synthetic model (n_v = side^2)")
    model_d_beta: int = _opt(16, "Identity basis size")
    model_d_psi: int = _opt(20, "Expression basis size")
    model_n_landmarks: int = _opt(24, "Landmark count")
    model_seed: int = _opt(7, "Seed of the synthetic morphable model")

    # Networks
    encoder_width: int = _opt(16, "First-stage channels of each encoder backbone")
    translator_bottleneck: int = _opt(512, "Translator bottleneck channels", published=512)
    translator_residual_blocks: int = _opt(4, "Residual blocks at the translator bottleneck")
    skip_connections: bool = _opt(True, "U-Net skip connections in the translator")

    # Rendering
    render_sigma: float = _opt(1e-4, "Edge softness of the rasterizer (normalized device units)")
    render_gamma: float = _opt(1e-2, "Depth blending temperature (model units)")

    # Loss weights
    w_photo: float = _opt(1.0, "Photometric L1 weight", published=1.0)
    w_vgg: float = _opt(10.0, "Perceptual weight", published=10.0)
    w_lmk: float = _opt(100.0, "Landmark weight", published=100.0)
    w_reg: float = _opt(1e-3, "Expression regularization weight", published=1e-3)
    w_emo: float = _opt(1.0, "Emotion weight", published=1.0)
    w_cycle: float = _opt(10.0, "Cycle expression-consistency weight", published=10.0)
    w_cycle_shape: float = _opt(10.0, "Cycle identity-consistency weight")
    reg_full_expression: bool = _opt(False, "Regularize eyelids and jaw too, not only psi_expr")
    perceptual_extractor: str = _opt("random-pyramid", "Registered perceptual feature extractor")
    emotion_extractor: str = _opt("emotion-proxy", "Registered emotion feature extractor")
    extractor_seed: int = _opt(0, "Seed of the fixed feature extractor weights")
    landmark_stop_step: int = _opt(-1, "Step from which the landmark loss is dropped; -1 keeps it")

    # Schedule
    batch_size: int = _opt(8, "Batch size", published=32)
    iterations: int = _opt(2000, "Training iterations (both passes)", published=250000)
    lr: float = _opt(1e-3, "Peak learning rate", published=1e-3)
    lr_min: float = _opt(1e-5, "Cosine-annealing floor")
    epoch_length: int = _opt(500, "Steps per epoch; the cosine schedule restarts each epoch")
    pretrain_iterations: int = _opt(500, "Encoder pretraining iterations", published=60000)
    pretrain_lr: float = _opt(5e-4, "Pretraining learning rate", published=5e-4)
    w_pretrain_beta: float = _opt(1.0, "Weight of beta regression during pretraining")
    pretrain_expression: bool = _opt(True, "Keep the pretrained expression branch (False re-initializes it)")
    log_every: int = _opt(50, "Log progress every N steps")
    checkpoint_every: int = _opt(500, "Save a checkpoint every N steps; 0 disables")

    # Masking
    mask_ratio: float = _opt(0.01, "Fraction of masked pixels retained", published=0.01)
    mask_dilation: int = _opt(4, "Disk dilation radius of the hull mask, pixels")
    exclude_render_interior: bool = _opt(False, "Never retain pixels inside the rendered face")

    # Cycle path and augmentation
    cycle_enabled: bool = _opt(True, "Alternate reconstruction and cycle passes")
    shared_batch: bool = _opt(False, "Cycle pass reuses the preceding reconstruction batch")
    augment_modes: list[str] = _opt(list(MODES), "Augmentation modes mixed uniformly per sample")
    noise_factor: float = _opt(0.5, "Perturb-mode noise as a multiple of the training Psi std")
    jaw_range: list[float] = _opt([0.0, 0.35], "Jaw opening range, radians")
    zero_mode_jaw_range: list[float] = _opt([0.0, 0.6], "Jaw opening range in zero mode, radians")
    eyelid_range: list[float] = _opt([0.0, 1.0], "Eyelid range")
    jaw_lateral: float = _opt(0.05, "Lateral jaw range, radians")
    template_library: str = _opt("", "Template library JSON; empty builds the authored library")

    # -- derived configs ---------------------------------------------------

    @property
    def size(self) -> tuple[int, int]:
        return self.image_size, self.image_size

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            n_vertices=self.model_n_side**2,
            d_beta=self.model_d_beta,
            d_psi=self.model_d_psi,
            n_landmarks=self.model_n_landmarks,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            photo=self.w_photo,
            vgg=self.w_vgg,
            lmk=self.w_lmk,
            reg=self.w_reg,
            emo=self.w_emo,
            cycle_exp=self.w_cycle,
            cycle_shape=self.w_cycle_shape,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.size, width=self.encoder_width, d_beta=self.model_d_beta, d_psi=self.model_d_psi
        )

    def translator_config(self) -> TranslatorConfig:
        return TranslatorConfig(
            image_size=self.size,
            bottleneck_channels=self.translator_bottleneck,
            residual_blocks=self.translator_residual_blocks,
            skip_connections=self.skip_connections,
        )

    def augment_plan(self, psi_std: float = 1.0) -> AugmentPlan:
        return AugmentPlan(
            modes=tuple(self.augment_modes),
            noise_scale=self.noise_factor * psi_std,
            jaw_range=(self.jaw_range[0], self.jaw_range[1]),
            zero_mode_jaw_range=(self.zero_mode_jaw_range[0], self.zero_mode_jaw_range[1]),
            eyelid_range=(self.eyelid_range[0], self.eyelid_range[1]),
            jaw_lateral=self.jaw_lateral,
        )

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if self.image_size <= 0 or self.image_size % 8:
            raise ConfigurationError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        self.model_spec().validate()
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigurationError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.mask_dilation < 0:
            raise ConfigurationError("mask_dilation must be >= 0")
        for f in fields(self):
            if f.name.startswith("w_") and getattr(self, f.name) < 0:
                raise ConfigurationError(f"Loss weight {f.name} must be >= 0")
        for name in ("batch_size", "epoch_length", "encoder_width", "translator_bottleneck", "dataset_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("iterations", "pretrain_iterations", "translator_residual_blocks", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr <= 0 or self.pretrain_lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigurationError("Learning rates must satisfy 0 <= lr_min <= lr and pretrain_lr > 0")
        if self.render_sigma <= 0 or self.render_gamma <= 0:
            raise ConfigurationError("render_sigma and render_gamma must be positive")
        if self.landmark_stop_step < -1:
            raise ConfigurationError("landmark_stop_step must be -1 (never) or a step index")
        if self.split_val < 0 or self.split_test < 0 or self.split_val + self.split_test >= 1:
            raise ConfigurationError("split_val + split_test must be below 1")
        if not self.dataset_mix or any(v < 0 for v in self.dataset_mix.values()):
            raise ConfigurationError("dataset_mix needs at least one shard with a non-negative fraction")
        if abs(sum(self.dataset_mix.values()) - 1.0) > 1e-6:
            raise ConfigurationError(f"dataset_mix fractions must sum to 1, got {sum(self.dataset_mix.values())}")
        self.augment_plan().validate()
        if self.cycle_enabled and self.augment_modes == ["permute"] and self.batch_size < 2:
            raise ConfigurationError("permute-only augmentation needs batch_size >= 2")

    # -- persistence -------------------------------------------------------

    @classmethod
    def from_mapping(cls, raw: dict) -> "TrainConfig":
        """Build from a flat mapping; profile values apply first, explicit keys override them."""
        known = {f.name for f in fields(cls)}
        # appearance_* keys belong to the dataset generator
        unknown = sorted(k for k in raw if k not in known and not k.startswith("appearance_"))
        if unknown:
            logger.warning("Ignoring unknown config keys: %s", ", ".join(unknown))
        filtered = {k: v for k, v in raw.items() if k in known}
        base = cls.from_profile(filtered.get("profile", "desk"))
        try:
            return replace(base, **filtered)
        except TypeError as exc:
            raise ConfigurationError(f"Invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TrainConfig":
        """Load a JSON or TOML config file. Returns defaults when no path is given."""
        if path is None:
            return cls()
        return cls.from_mapping(read_mapping(path))

    def save(self, path: str | Path) -> Path:
        """Persist as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        return path

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    # -- profiles ----------------------------------------------------------

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "TrainConfig":
        values = PROFILES.get(name)
        if values is None:
            raise ConfigurationError(f"Unknown profile: {name!r}. Choose from: {', '.join(PROFILES)}")
        return replace(cls(), **{"profile": name, **values, **overrides})

    @classmethod
    def schema(cls) -> dict:
        """JSON-schema document of the config, with published defaults annotated."""
        properties = {}
        for f in fields(cls):
            default = f.default_factory() if f.default_factory is not MISSING else f.default
            entry = {
                "type": _json_type(f.type),
                "default": default,
                "description": f.metadata.get("description", ""),
            }
            if "paper_default" in f.metadata:
                entry["paper_default"] = f.metadata["paper_default"]
            properties[f.name] = entry
        return {
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "title": "facelab run configuration",
            "version": SCHEMA_VERSION,
            "type": "object",
            "properties": properties,
            "profiles": PROFILES,
        }


def read_mapping(path: str | Path) -> dict:
    """Raw flat mapping of a JSON or TOML config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
        return tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"Corrupt config file {path}: {exc}") from exc


def _json_type(tp) -> str:
    origin = typing.get_origin(tp) or tp
    return {
        bool: "boolean",
        int: "integer",
        float: "number",
        str: "string",
        list: "array",
        dict: "object",
    }.get(origin, "string")


# Profiles only scale sizes and iteration counts
PROFILES: dict[str, dict] = {
    "tiny": {
        "image_size": 32,
        "dataset_size": 24,
        "model_n_side": 13,
        "model_d_beta": 4,
        "model_d_psi": 6,
        "encoder_width": 4,
        "translator_bottleneck": 16,
        "translator_residual_blocks": 1,
        "batch_size": 4,
        "iterations": 8,
        "pretrain_iterations": 4,
        "epoch_length": 4,
        "log_every": 2,
        "checkpoint_every": 0,
    },
    "desk": {},
    "full": {
        "image_size": 224,
        "dataset_size": 100000,
        "model_n_side": 71,
        "model_d_beta": 100,
        "model_d_psi": 50,
        "encoder_width": 32,
        "batch_size": 32,
        "iterations": 250000,
        "pretrain_iterations": 60000,
        "epoch_length": 10000,
        "log_every": 500,
        "checkpoint_every": 10000,
    },
}
