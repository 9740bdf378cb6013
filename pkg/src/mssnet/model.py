"""Full coarse-to-fine network assembly and the declarative variant family.

A model is a grid of per-stage UNets over 1..n scales (coarse to fine),
with per-scale feature extractors, inter-scale fusion, cross-stage /
cross-scale feature fusion (csff), per-stage auxiliary heads used during
training, and a final residual head. Scale s works at 1/2^(n-s) of the
input resolution; coarse-scale inputs are either downsampled images or
pixel-unshuffled tensors of the next scale's image.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import add, constant
from .errors import ContractViolation
from .layers import (BRANCH_INIT, LINEAR_INIT,
                     Conv, ResBlock, bilinear_resize, concat_channels,
                     pixel_shuffle, pixel_unshuffle)
from .unet import StageFeatures, UNetChannels, UNetStage, unet_forward

FEATURE_CONCAT = "FeatureConcat"
FEATURE_SKIP = "FeatureSkip"
IMAGE_CONCAT = "ImageConcat"
_MODES = (FEATURE_CONCAT, FEATURE_SKIP, IMAGE_CONCAT)

SHARE_ALL = "AllStagesAndScales"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Declarative description of one variant."""
    stages_per_scale: tuple = (1, 2, 3)
    channels: tuple = (UNetChannels(54, 96, 138),)
    csff: bool = True
    propagation_mode: str = FEATURE_CONCAT
    pixel_unshuffle_inputs: bool = True
    aux_pixel_shuffle_heads: bool = True
    weight_sharing: str = None
    base_channels: int = 54

    def __post_init__(self):
        stages = tuple(int(s) for s in self.stages_per_scale)
        if not stages or any(s < 1 for s in stages):
            raise ContractViolation(f"config: bad stages_per_scale {stages}")
        object.__setattr__(self, "stages_per_scale", stages)

        ch = self.channels
        if isinstance(ch, UNetChannels):
            ch = (ch,)
        ch = tuple(c if isinstance(c, UNetChannels) else UNetChannels(*c)
                   for c in ch)
        total = sum(stages)
        if len(ch) == 1:
            ch = ch * total
        if len(ch) != total:
            raise ContractViolation(
                f"config: {len(ch)} channel triples for {total} stages")
        object.__setattr__(self, "channels", ch)

        if self.propagation_mode not in _MODES:
            raise ContractViolation(
                f"config: unknown propagation_mode {self.propagation_mode!r}")
        if self.propagation_mode != FEATURE_CONCAT and self.csff:
            raise ContractViolation(
                f"config: {self.propagation_mode} requires csff=false")
        if self.propagation_mode == IMAGE_CONCAT and self.pixel_unshuffle_inputs:
            raise ContractViolation(
                "config: ImageConcat concatenates plain images, so coarse "
                "inputs cannot be pixel-unshuffled tensors")
        if self.aux_pixel_shuffle_heads and not self.pixel_unshuffle_inputs:
            raise ContractViolation(
                "config: aux_pixel_shuffle_heads requires pixel_unshuffle_inputs")
        if self.weight_sharing not in (None, SHARE_ALL):
            raise ContractViolation(
                f"config: unknown weight_sharing {self.weight_sharing!r}")
        if self.weight_sharing == SHARE_ALL and len(set(ch)) != 1:
            raise ContractViolation(
                "config: weight sharing needs identical channels everywhere")
        if self.csff and len(set(ch)) != 1:
            raise ContractViolation(
                "config: csff chaining needs identical channels everywhere")
        if any(c.x != self.base_channels for c in ch):
            raise ContractViolation(
                "config: every stage's level-1 width must equal base_channels")

    @property
    def n_scales(self):
        return len(self.stages_per_scale)

    def stage_channels(self, i, j):
        """Channels of stage j (1-based) at scale i (1-based, coarse first)."""
        idx = sum(self.stages_per_scale[:i - 1]) + (j - 1)
        return self.channels[idx]

    def stage_keys(self):
        """(scale, stage) pairs in execution order."""
        return [(i, j)
                for i in range(1, self.n_scales + 1)
                for j in range(1, self.stages_per_scale[i - 1] + 1)]

    def aux_keys(self):
        """Stages that carry an auxiliary output (all but the last)."""
        return self.stage_keys()[:-1]

    def extractor_in_channels(self, i):
        n = self.n_scales
        if self.pixel_unshuffle_inputs and i < n:
            return 12
        if self.propagation_mode == IMAGE_CONCAT and i > 1:
            return 6
        return 3

    def aux_head_out_channels(self, i):
        """12 for pixel-shuffle heads on coarse scales, else 3."""
        if self.aux_pixel_shuffle_heads and i < self.n_scales:
            return 12
        return 3


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _cfg(stages, ch, **kw):
    return ModelConfig(stages_per_scale=tuple(stages),
                       channels=(UNetChannels(*ch),),
                       base_channels=ch[0], **kw)


_ABLATION = dict(csff=False, pixel_unshuffle_inputs=False,
                 aux_pixel_shuffle_heads=False)

_PRESETS = {
    "MSSNet": lambda: _cfg([1, 2, 3], (54, 96, 138)),
    "MSSNet-small": lambda: _cfg([1, 2, 3], (20, 60, 100)),
    "MSSNet-large": lambda: _cfg([1, 2, 3], (80, 130, 180)),
    "MSSNet-WS": lambda: _cfg([1, 2, 3], (54, 96, 138),
                              weight_sharing=SHARE_ALL),
    "MSSNet-Single": lambda: _cfg([4], (20, 60, 100), **_ABLATION),
    "MSSNet-Multi": lambda: _cfg([1, 2, 3], (20, 60, 100), csff=False),
    "MSSNet-Multi-Small": lambda: ModelConfig(
        stages_per_scale=(1, 2, 3),
        channels=tuple([UNetChannels(20, 36, 52)] * 3
                       + [UNetChannels(20, 60, 100)] * 3),
        csff=False, base_channels=20),
    "M123": lambda: _cfg([1, 2, 3], (20, 60, 100), weight_sharing=SHARE_ALL),
    "M552": lambda: _cfg([5, 5, 2], (20, 60, 100), weight_sharing=SHARE_ALL),
    "M321": lambda: _cfg([3, 2, 1], (20, 60, 100), **_ABLATION),
    "M222": lambda: _cfg([2, 2, 2], (20, 60, 100), **_ABLATION),
    "MSS-ImageConcat": lambda: _cfg([1, 2, 3], (20, 60, 100),
                                    propagation_mode=IMAGE_CONCAT, **_ABLATION),
    "MSS-FeatureSkip": lambda: _cfg([1, 2, 3], (20, 60, 100),
                                    propagation_mode=FEATURE_SKIP, **_ABLATION),
    "MSS-FeatureConcat": lambda: _cfg([1, 2, 3], (20, 60, 100), **_ABLATION),
    "NoPUS-NoPS": lambda: _cfg([1, 2, 3], (20, 60, 100), **_ABLATION),
    "PUS-only": lambda: _cfg([1, 2, 3], (20, 60, 100), csff=False,
                             aux_pixel_shuffle_heads=False),
    "PUS-PS": lambda: _cfg([1, 2, 3], (20, 60, 100), csff=False),
}


def preset(name):
    """Return the configuration for a named variant."""
    try:
        return _PRESETS[name]()
    except KeyError:
        known = ", ".join(sorted(_PRESETS))
        raise ContractViolation(f"unknown preset {name!r}; known: {known}")


def preset_names():
    return sorted(_PRESETS)


# ---------------------------------------------------------------------------
# input pyramid
# ---------------------------------------------------------------------------

def make_inputs(B, config):
    """Build the per-scale images B_i and stage inputs X_i.

    Returns {"B_i": node, "X_i": node} for i = 1..n_scales; B_n is the
    input itself, each coarser B_i a bilinear 0.5 downsample. With
    pixel_unshuffle_inputs, coarse stage inputs are unshuffled from the
    next scale's image.
    """
    if not hasattr(B, "value"):
        B = constant(np.asarray(B))
    h, w = B.value.shape[2], B.value.shape[3]
    if h % 4 or w % 4:
        raise ContractViolation(f"input dims ({h}, {w}) not divisible by 4")
    n = config.n_scales
    images = {n: B}
    for i in range(n - 1, 0, -1):
        images[i] = bilinear_resize(images[i + 1], 0.5)
    out = {}
    for i in range(1, n + 1):
        out[f"B_{i}"] = images[i]
        if config.pixel_unshuffle_inputs and i < n:
            out[f"X_{i}"] = pixel_unshuffle(images[i + 1], 2)
        else:
            out[f"X_{i}"] = images[i]
    return out


# ---------------------------------------------------------------------------
# inter-scale fusion
# ---------------------------------------------------------------------------

class FuseScale:
    """Parameters for fusing the previous scale's output into this one."""

    def __init__(self, name, x, mode, rng, dtype):
        self.mode = mode
        if mode == FEATURE_SKIP:
            # additive injection; starts small like the csff branches
            self.proj = Conv(name + "/proj", x, x, 1, rng, dtype,
                             init_scale=BRANCH_INIT)
        elif mode == FEATURE_CONCAT:
            self.proj = Conv(name + "/proj", x, x, 1, rng, dtype,
                             init_scale=LINEAR_INIT)
            self.mix = Conv(name + "/mix", 2 * x, x, 3, rng, dtype,
                            init_scale=LINEAR_INIT)

    def modules(self):
        if self.mode in (FEATURE_CONCAT, FEATURE_SKIP):
            yield self.proj
        if self.mode == FEATURE_CONCAT:
            yield self.mix

    def variables(self):
        for m in self.modules():
            yield from m.variables()


def fuse_scale(coarse_dec, fine_feat, params, mode):
    """Merge the last coarse-stage output into the finer scale.

    FeatureConcat: bi-up x2 -> 1x1 conv -> concat after fine_feat ->
    3x3 conv back to x channels. FeatureSkip: bi-up -> 1x1 conv -> add.
    ImageConcat: image-level, bi-up the coarse image and concat after
    the finer blurred input (params unused).
    """
    if mode not in _MODES:
        raise ContractViolation(f"fuse_scale: unknown mode {mode!r}")
    up = bilinear_resize(coarse_dec, 2)
    if up.value.shape[2:] != fine_feat.value.shape[2:]:
        raise ContractViolation(
            f"fuse_scale: upsampled {up.value.shape} does not align with "
            f"{fine_feat.value.shape}")
    if mode == IMAGE_CONCAT:
        if params is not None:
            raise ContractViolation("fuse_scale: ImageConcat takes no params")
        return concat_channels(fine_feat, up)
    if params is None or params.mode != mode:
        raise ContractViolation(f"fuse_scale: params do not match mode {mode}")
    proj = params.proj(up)
    if mode == FEATURE_SKIP:
        return add(fine_feat, proj)
    return params.mix(concat_channels(fine_feat, proj))


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

class Extractor:
    """conv3x3 (image/tensor -> x channels) + one ResBlock."""

    def __init__(self, name, c_in, x, rng, dtype):
        self.conv = Conv(name + "/conv", c_in, x, 3, rng, dtype,
                         init_scale=LINEAR_INIT)
        self.rb = ResBlock(name + "/rb", x, rng, dtype)

    def __call__(self, t):
        return self.rb(self.conv(t))

    def modules(self):
        yield self.conv
        yield self.rb

    def variables(self):
        for m in self.modules():
            yield from m.variables()


@dataclass
class ForwardOutputs:
    """final = B + residual; aux maps (scale, stage) -> image node.

    head_keys lists every stage key of the producing config in order;
    all but the last name aux entries (populated in train mode), the
    last names the final head.
    """
    final: object
    residual: object
    aux: dict = field(default_factory=dict)
    head_keys: tuple = ()


class MSSNet:
    """Built model: parameter containers plus the forward graph builder."""

    def __init__(self, config, seed, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        dt = self.dtype
        n = config.n_scales

        shared = None
        if config.weight_sharing == SHARE_ALL:
            shared = UNetStage("unet_shared", config.channels[0],
                               config.csff, rng, dt)

        self.extractors = {}
        self.fusions = {}
        self.stages = {}
        self.aux_heads = {}
        aux_keys = set(config.aux_keys())
        for i in range(1, n + 1):
            x = config.base_channels
            self.extractors[i] = Extractor(
                f"s{i}/extract", config.extractor_in_channels(i), x, rng, dt)
            if i > 1 and config.propagation_mode != IMAGE_CONCAT:
                self.fusions[i] = FuseScale(
                    f"s{i}/fuse", x, config.propagation_mode, rng, dt)
            for j in range(1, config.stages_per_scale[i - 1] + 1):
                if shared is not None:
                    self.stages[(i, j)] = shared
                else:
                    # stage (1,1) never receives fused features, so it
                    # owns no csff projections even in csff models
                    has_csff = config.csff and not (i == 1 and j == 1)
                    self.stages[(i, j)] = UNetStage(
                        f"s{i}/u{j}", config.stage_channels(i, j),
                        has_csff, rng, dt)
            for j in range(1, config.stages_per_scale[i - 1] + 1):
                if (i, j) in aux_keys:
                    self.aux_heads[(i, j)] = Conv(
                        f"s{i}/aux{j}", x, config.aux_head_out_channels(i),
                        3, rng, dt, init_scale=BRANCH_INIT)
        self.final_head = Conv("final_head", config.base_channels, 3, 3,
                               rng, dt, init_scale=BRANCH_INIT)

    def modules(self):
        seen = set()
        for i in range(1, self.config.n_scales + 1):
            yield from self.extractors[i].modules()
            if i in self.fusions:
                yield from self.fusions[i].modules()
            for j in range(1, self.config.stages_per_scale[i - 1] + 1):
                stage = self.stages[(i, j)]
                if id(stage) not in seen:
                    seen.add(id(stage))
                    yield from stage.modules()
                if (i, j) in self.aux_heads:
                    yield self.aux_heads[(i, j)]
        yield self.final_head

    def variables(self):
        """Unique Variables in a stable order (shared sets appear once)."""
        seen = set()
        for m in self.modules():
            for v in m.variables():
                if id(v) not in seen:
                    seen.add(id(v))
                    yield v

    def n_params(self):
        return sum(v.value.size for v in self.variables())

    def forward(self, B, train_mode=False):
        return model_forward(self, B, train_mode)


def build_model(config, seed, dtype=np.float32):
    """Instantiate all Variables for a config, deterministically."""
    return MSSNet(config, seed, dtype=dtype)


def _upsample_features(feats):
    return StageFeatures(*(bilinear_resize(t, 2) for t in feats.as_tuple()))


def model_forward(model, B, train_mode):
    """Run the coarse-to-fine pipeline; see ForwardOutputs.

    In train_mode every non-final stage also produces an auxiliary
    image (pixel-shuffle heads on coarse scales when configured, plain
    3-channel heads otherwise). With ImageConcat propagation the
    coarse-scale-final heads run in every mode, since their images feed
    the next scale.
    """
    cfg = model.config
    if not hasattr(B, "value"):
        B = constant(np.asarray(B, dtype=model.dtype))
    inputs = make_inputs(B, cfg)
    n = cfg.n_scales
    mode = cfg.propagation_mode

    aux = {}
    prev_scale_feats = None      # StageFeatures of previous scale's last stage
    prev_scale_dl1 = None
    prev_scale_image = None      # ImageConcat only
    out = None
    for i in range(1, n + 1):
        x_in = inputs[f"X_{i}"]
        if mode == IMAGE_CONCAT and i > 1:
            x_in = fuse_scale(prev_scale_image, x_in, None, IMAGE_CONCAT)
        feat = model.extractors[i](x_in)
        if mode != IMAGE_CONCAT and i > 1:
            feat = fuse_scale(prev_scale_dl1, feat, model.fusions[i], mode)

        k = cfg.stages_per_scale[i - 1]
        prev_feats = None
        for j in range(1, k + 1):
            if cfg.csff and (j > 1 or i > 1):
                prev = prev_feats if j > 1 else _upsample_features(prev_scale_feats)
            else:
                prev = None
            stage = model.stages[(i, j)]
            out = unet_forward(feat, prev, stage.channels, stage,
                               prev is not None)

            head = model.aux_heads.get((i, j))
            structural = (mode == IMAGE_CONCAT and i < n and j == k)
            if head is not None and (train_mode or structural):
                img = _aux_image(cfg, head, out.dl_1, inputs, i)
                if structural:
                    prev_scale_image = img
                if train_mode:
                    aux[(i, j)] = img

            feat = out.dl_1
            prev_feats = out
        prev_scale_feats = out
        prev_scale_dl1 = out.dl_1

    residual = model.final_head(out.dl_1)
    final = add(residual, inputs[f"B_{n}"])
    return ForwardOutputs(final=final, residual=residual, aux=aux,
                          head_keys=tuple(cfg.stage_keys()))


def _aux_image(cfg, head, dl_1, inputs, i):
    """Auxiliary image for a stage at scale i."""
    r = head(dl_1)
    if cfg.aux_head_out_channels(i) == 12:
        return add(pixel_shuffle(r, 2), inputs[f"B_{i + 1}"])
    return add(r, inputs[f"B_{i}"])
