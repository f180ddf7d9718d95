"""Model and training configuration presets."""

from dataclasses import dataclass, field, asdict


LAMBDA_SET = (50, 95, 200, 400)


@dataclass
class CodecConfig:
    # context channels per scale, scale 1 = full working resolution
    n1: int = 48
    n2: int = 64
    n3: int = 48
    stages_per_scale: int = 2
    oda_groups: int = 2

    # transforms
    latent_channels: int = 128
    motion_latent_channels: int = 64
    transform_channels: int = 64

    # latent prior attention
    embed_dim: int = 128
    num_heads: int = 8
    window: int = 8
    rstb_blocks: int = 2
    layers_per_block: int = 2
    queue_len: int = 3

    # entropy model
    scale_floor: float = 0.11
    symbol_min: int = -256
    symbol_max: int = 255
    cdf_precision: int = 16

    # training
    lambdas: tuple = LAMBDA_SET
    frame_weights: tuple = (0.5, 1.2, 0.5, 0.9)
    w_l: float = 0.05
    group_len_independent: int = 6
    group_len_joint: int = 32
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.queue_len != 3:
            raise ValueError("queue depth is fixed at 3")
        for name in ("n1", "n2", "n3", "latent_channels",
                     "motion_latent_channels", "transform_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.stages_per_scale < 0:
            raise ValueError("stages_per_scale must be >= 0")
        if len(self.frame_weights) != 4:
            raise ValueError("frame_weights is a period-4 pattern")

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["frame_weights"] = list(self.frame_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["lambdas"] = tuple(d.get("lambdas", LAMBDA_SET))
        d["frame_weights"] = tuple(d.get("frame_weights", (0.5, 1.2, 0.5, 0.9)))
        return cls(**d)


def default_config() -> CodecConfig:
    return CodecConfig()


def tiny_config() -> CodecConfig:
    """Shrunk preset for CPU tests; same topology as the default."""
    return CodecConfig(
        n1=12, n2=16, n3=12,
        stages_per_scale=1,
        latent_channels=16,
        motion_latent_channels=8,
        transform_channels=16,
        embed_dim=16, num_heads=2, window=4,
        rstb_blocks=1, layers_per_block=2,
        group_len_independent=4,
        group_len_joint=8,
        learning_rate=4e-4,
    )


def toy_config() -> CodecConfig:
    """Minimal preset for finite-difference checks, kept under 1e4 parameters.

    Refinement stages are dropped here (their gradients are checked at module
    level); everything else keeps the full topology at width 2.
    """
    return CodecConfig(
        n1=2, n2=2, n3=2,
        stages_per_scale=0,
        oda_groups=2,
        latent_channels=2,
        motion_latent_channels=2,
        transform_channels=2,
        embed_dim=2, num_heads=1, window=2,
        rstb_blocks=1, layers_per_block=1,
        group_len_independent=2,
        group_len_joint=2,
    )
