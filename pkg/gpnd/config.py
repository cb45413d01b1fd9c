"""
GPND — Application Configuration
All defaults, limits and paths used across the package, plus the flat
key=value run configuration consumed by the command line.
"""

import os
from dataclasses import dataclass, fields, replace

from gpnd.errors import ConfigError

# ─── Networks ─────────────────────────────────────────────────────────────────
LATENT_DIM = 16                 # n
HIDDEN_DIMS = (256, 128)        # Dense substitute for the convolutional stacks
LEAKY_SLOPE = 0.2               # Discriminator leaky-relu slope

# ─── Adam ─────────────────────────────────────────────────────────────────────
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# ─── Training ─────────────────────────────────────────────────────────────────
EPOCHS = 80
BATCH_SIZE = 128
LEARNING_RATE = 0.002
LAMBDA_RECON = 2.0              # Weight of L_error in the g+f update
DZ_WEIGHT = 2.0                 # Weight of L_adv-dz when updating D_z
ADV_WEIGHT = 1.0                # Every other loss weight
DISC_CLAMP = 1e-7               # Discriminator outputs kept in [eps, 1-eps]
LOGVAR_CLAMP = 10.0             # |log sigma^2| bound of the variational encoder
MODEL_KINDS = ("aae", "vae")    # vae: reparameterized encoder + KL term, no D_z

# Desk-scale preset: same network, fewer epochs.
DESK_PRESET = {"epochs": 20}

# ─── Geometry ─────────────────────────────────────────────────────────────────
JACOBIAN_STEP = 1e-4            # Central-difference step h
RANK_TOLERANCE = 1e-10          # s_min < tol * s_max flags a degenerate sample

# ─── Density ──────────────────────────────────────────────────────────────────
HIST_BINS = 100
HIST_FLOOR_DIVISOR = 10.0       # floor = 1 / (N * width * divisor)
R_MIN_FACTOR = 1e-3             # r_min = smallest positive training norm * factor
GG_BETA_BOUNDS = (0.1, 10.0)
GG_MIN_SAMPLES = 30
PERP_EXPONENTS = ("codimension", "surface_area")

# ─── Scoring / Evaluation ─────────────────────────────────────────────────────
SCORING_MODES = (
    "complete",
    "parallel_only",
    "perpendicular_only",
    "pz_only",
    "reconstruction",
)
ABLATION_MODES = SCORING_MODES
MIN_DENSITY_SAMPLES = 100
FOLDS = 5
OUTLIER_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)
TPR_TARGET = 0.95

# ─── Synthetic Data ───────────────────────────────────────────────────────────
SYNTH_GENERATORS = ("tanh", "linear")
SYNTH_NOISE_SIGMA = 0.02
SYNTH_LINEAR_OFFSET = 0.5

# ─── Seeds ────────────────────────────────────────────────────────────────────
# Every random stream is numpy Generator(PCG64(derive_seed(seed, purpose))).
SEED_MASK = (1 << 64) - 1
SEED_PURPOSES = {
    "init": 0x9E3779B97F4A7C15,
    "train": 0xBF58476D1CE4E5B9,
    "split": 0x94D049BB133111EB,
    "outliers": 0xD6E8FEB86659FD93,
    "validation": 0xA0761D6478BD642F,
    "synthetic": 0xE7037ED1A0B428DB,
}

# ─── Paths ────────────────────────────────────────────────────────────────────
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.getenv("GPND_DATA_DIR", os.path.join(PROJECT_ROOT, "data")).strip()
# Optional proxy for dataset downloads; empty means environment/direct only.
PROXY_URL = os.getenv("GPND_PROXY_URL", "").strip()
DOWNLOAD_TIMEOUT_SECONDS = 60

# ─── Logging ──────────────────────────────────────────────────────────────────
LOG_LEVEL = os.getenv("GPND_LOG_LEVEL", "INFO").strip().upper()
LOG_FORMAT = "%(asctime)s  %(levelname)-8s  %(name)s  %(message)s"


# ─── Helper Functions ─────────────────────────────────────────────────────────

def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Sub-seed for one purpose: (seed XOR constant) + index, on 64 bits."""
    if purpose not in SEED_PURPOSES:
        raise ConfigError(f"unknown seed purpose: {purpose!r}")
    return ((int(seed) ^ SEED_PURPOSES[purpose]) + int(index)) & SEED_MASK


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _parse_ratio_or_match(text: str) -> float | None:
    if text.strip().lower() == "match":
        return None
    return float(text)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run; one flat key=value file maps onto it."""

    preset: str = "full"
    latent_dim: int = LATENT_DIM
    hidden_dims: tuple[int, ...] = HIDDEN_DIMS
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    lambda_recon: float = LAMBDA_RECON
    dz_weight: float = DZ_WEIGHT
    adv_weight: float = ADV_WEIGHT
    use_disc_x: bool = True
    model_kind: str = "aae"
    hist_bins: int = HIST_BINS
    jacobian_step: float = JACOBIAN_STEP
    perp_exponent: str = "codimension"
    scoring_mode: str = "complete"
    ratios: tuple[float, ...] = OUTLIER_RATIOS
    folds: int = FOLDS
    use_validation: bool = True
    validation_ratio: float | None = None   # None = match the test ratio
    max_train_samples: int = 0
    ablation: bool = False
    baselines: bool = False                 # also train a vae detector per fold
    seed: int = 0
    synth_latent_dim: int = 4
    synth_ambient_dim: int = 64
    synth_generator: str = "tanh"
    synth_hidden: int = 32
    synth_noise_sigma: float = SYNTH_NOISE_SIGMA
    synth_count: int = 2000
    synth_classes: int = 2

    def __post_init__(self):
        self.validate()

    # ── Validation ─────────────────────────────────────────────────────────

    def validate(self) -> None:
        """Raise ConfigError naming the first key that breaks a precondition."""
        checks = [
            ("preset", self.preset in ("full", "desk")),
            ("latent_dim", self.latent_dim >= 1),
            ("hidden_dims", len(self.hidden_dims) >= 1 and all(h >= 1 for h in self.hidden_dims)),
            ("epochs", self.epochs >= 0),
            ("batch_size", self.batch_size >= 1),
            ("learning_rate", self.learning_rate > 0),
            ("lambda_recon", self.lambda_recon >= 0),
            ("dz_weight", self.dz_weight >= 0),
            ("adv_weight", self.adv_weight >= 0),
            ("model_kind", self.model_kind in MODEL_KINDS),
            ("hist_bins", self.hist_bins >= 1),
            ("jacobian_step", self.jacobian_step > 0),
            ("perp_exponent", self.perp_exponent in PERP_EXPONENTS),
            ("scoring_mode", self.scoring_mode in SCORING_MODES),
            ("ratios", len(self.ratios) >= 1 and all(0 < r < 1 for r in self.ratios)),
            ("folds", self.folds >= 2 + int(self.use_validation)),
            ("validation_ratio", self.validation_ratio is None or 0 < self.validation_ratio < 1),
            ("max_train_samples", self.max_train_samples >= 0),
            ("seed", 0 <= self.seed <= SEED_MASK),
            ("synth_latent_dim", self.synth_latent_dim >= 1),
            ("synth_ambient_dim", self.synth_ambient_dim > self.synth_latent_dim),
            ("synth_generator", self.synth_generator in SYNTH_GENERATORS),
            ("synth_hidden", self.synth_hidden >= 1),
            ("synth_noise_sigma", self.synth_noise_sigma >= 0),
            ("synth_count", self.synth_count >= 1),
            ("synth_classes", self.synth_classes >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for config key '{key}': {getattr(self, key)!r}")

    # ── Public API ─────────────────────────────────────────────────────────

    def with_overrides(self, **values) -> "RunConfig":
        """Copy with some fields replaced (re-validated)."""
        return replace(self, **values)

    def to_text(self) -> str:
        """Serialize back to key=value lines, in declaration order."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif value is None:
                text = "match"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "preset": str,
    "latent_dim": int,
    "hidden_dims": _parse_int_list,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "lambda_recon": float,
    "dz_weight": float,
    "adv_weight": float,
    "use_disc_x": _parse_bool,
    "model_kind": str,
    "hist_bins": int,
    "jacobian_step": float,
    "perp_exponent": str,
    "scoring_mode": str,
    "ratios": _parse_float_list,
    "folds": int,
    "use_validation": _parse_bool,
    "validation_ratio": _parse_ratio_or_match,
    "max_train_samples": int,
    "ablation": _parse_bool,
    "baselines": _parse_bool,
    "seed": int,
    "synth_latent_dim": int,
    "synth_ambient_dim": int,
    "synth_generator": str,
    "synth_hidden": int,
    "synth_noise_sigma": float,
    "synth_count": int,
    "synth_classes": int,
}


def parse_run_config(text: str) -> RunConfig:
    """Parse flat key=value text.  Unknown or repeated keys are errors.

    ``preset`` is applied first, so explicit keys always win over it.
    """
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key '{key}' (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate config key '{key}' (line {lineno})")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"invalid value for config key '{key}': {value!r} ({exc})") from exc

    preset = values.get("preset", "full")
    base = dict(DESK_PRESET) if preset == "desk" else {}
    base.update(values)
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_run_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
