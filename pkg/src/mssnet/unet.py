"""The per-stage encoder/decoder module.

Three-level ladder: each level runs 2 ResBlocks; levels connect through
bilinear down/up followed by a 1x1 conv; decoder levels 1-2 receive a
ResBlock skip from the matching encoder level. With csff enabled, each
encoder level additionally sums 1x1-conv projections of the previous
stage's encoder and decoder features at that level.
"""

from dataclasses import dataclass

from .autodiff import add
from .errors import ContractViolation
from .layers import BRANCH_INIT, LINEAR_INIT, Conv, ResBlock, bilinear_resize


@dataclass(frozen=True)
class UNetChannels:
    """Channel widths at ladder levels 1 (finest) to 3 (coarsest)."""
    x: int
    y: int
    z: int

    def __post_init__(self):
        if min(self.x, self.y, self.z) < 1:
            raise ContractViolation(f"UNetChannels: non-positive width {self}")


@dataclass
class StageFeatures:
    """The six feature maps one stage exports.

    el_1/dl_1 are at the stage's working resolution, level 2 at 1/2,
    level 3 at 1/4.
    """
    el_1: object
    el_2: object
    el_3: object
    dl_1: object
    dl_2: object
    dl_3: object

    def as_tuple(self):
        return (self.el_1, self.el_2, self.el_3,
                self.dl_1, self.dl_2, self.dl_3)


class UNetStage:
    """Parameter container for one stage's UNet.

    `csff` controls whether this instance owns the six 1x1 fusion
    convs that project the previous stage's features in.
    """

    def __init__(self, name, channels, csff, rng, dtype):
        ch = channels
        self.channels = ch
        self.csff = csff
        self.name = name

        def rb(tag, c):
            return ResBlock(f"{name}/{tag}", c, rng, dtype)

        def c1(tag, c_in, c_out, scale=LINEAR_INIT):
            return Conv(f"{name}/{tag}", c_in, c_out, 1, rng, dtype,
                        init_scale=scale)

        self.enc1 = [rb("enc1/rb1", ch.x), rb("enc1/rb2", ch.x)]
        if csff:
            self.csff_el1 = c1("csff/el1", ch.x, ch.x, BRANCH_INIT)
            self.csff_dl1 = c1("csff/dl1", ch.x, ch.x, BRANCH_INIT)
        self.down12 = c1("down12", ch.x, ch.y)
        self.enc2 = [rb("enc2/rb1", ch.y), rb("enc2/rb2", ch.y)]
        if csff:
            self.csff_el2 = c1("csff/el2", ch.y, ch.y, BRANCH_INIT)
            self.csff_dl2 = c1("csff/dl2", ch.y, ch.y, BRANCH_INIT)
        self.down23 = c1("down23", ch.y, ch.z)
        self.enc3 = [rb("enc3/rb1", ch.z), rb("enc3/rb2", ch.z)]
        if csff:
            self.csff_el3 = c1("csff/el3", ch.z, ch.z, BRANCH_INIT)
            self.csff_dl3 = c1("csff/dl3", ch.z, ch.z, BRANCH_INIT)
        self.dec3 = [rb("dec3/rb1", ch.z), rb("dec3/rb2", ch.z)]
        self.up32 = c1("up32", ch.z, ch.y)
        self.skip2 = rb("skip2", ch.y)
        self.dec2 = [rb("dec2/rb1", ch.y), rb("dec2/rb2", ch.y)]
        self.up21 = c1("up21", ch.y, ch.x)
        self.skip1 = rb("skip1", ch.x)
        self.dec1 = [rb("dec1/rb1", ch.x), rb("dec1/rb2", ch.x)]

    def modules(self):
        yield from self.enc1
        if self.csff:
            yield self.csff_el1
            yield self.csff_dl1
        yield self.down12
        yield from self.enc2
        if self.csff:
            yield self.csff_el2
            yield self.csff_dl2
        yield self.down23
        yield from self.enc3
        if self.csff:
            yield self.csff_el3
            yield self.csff_dl3
        yield from self.dec3
        yield self.up32
        yield self.skip2
        yield from self.dec2
        yield self.up21
        yield self.skip1
        yield from self.dec1

    def variables(self):
        for m in self.modules():
            yield from m.variables()

    def __call__(self, feat, prev=None, csff=None):
        if csff is None:
            csff = self.csff and prev is not None
        return unet_forward(feat, prev, self.channels, self, csff)


def _check_prev(prev, channels, h, w):
    want = [
        ("el_1", prev.el_1, channels.x, h, w),
        ("el_2", prev.el_2, channels.y, h // 2, w // 2),
        ("el_3", prev.el_3, channels.z, h // 4, w // 4),
        ("dl_1", prev.dl_1, channels.x, h, w),
        ("dl_2", prev.dl_2, channels.y, h // 2, w // 2),
        ("dl_3", prev.dl_3, channels.z, h // 4, w // 4),
    ]
    for tag, node, c, hh, ww in want:
        if node is None:
            raise ContractViolation(f"unet_forward: prev.{tag} missing")
        if node.value.shape[1:] != (c, hh, ww):
            raise ContractViolation(
                f"unet_forward: prev.{tag} shape {node.value.shape} != "
                f"(*, {c}, {hh}, {ww})")


def unet_forward(feat, prev, channels, params, csff):
    """Run the ladder; returns all six encoder/decoder features.

    prev must be present exactly when csff is set; its shapes are
    checked against `channels` at the stage's resolution.
    """
    if channels != params.channels:
        raise ContractViolation(
            f"unet_forward: channels {channels} != params {params.channels}")
    if csff and not params.csff:
        raise ContractViolation("unet_forward: params own no fusion convs")
    if csff != (prev is not None):
        raise ContractViolation("unet_forward: prev must be present iff csff")
    if feat.value.shape[1] != channels.x:
        raise ContractViolation(
            f"unet_forward: feat has {feat.value.shape[1]} channels, "
            f"want {channels.x}")
    h, w = feat.value.shape[2], feat.value.shape[3]
    if prev is not None:
        _check_prev(prev, channels, h, w)

    e1 = params.enc1[1](params.enc1[0](feat))
    if csff:
        e1 = add(e1, add(params.csff_el1(prev.el_1), params.csff_dl1(prev.dl_1)))

    e2 = params.down12(bilinear_resize(e1, 0.5))
    e2 = params.enc2[1](params.enc2[0](e2))
    if csff:
        e2 = add(e2, add(params.csff_el2(prev.el_2), params.csff_dl2(prev.dl_2)))

    e3 = params.down23(bilinear_resize(e2, 0.5))
    e3 = params.enc3[1](params.enc3[0](e3))
    if csff:
        e3 = add(e3, add(params.csff_el3(prev.el_3), params.csff_dl3(prev.dl_3)))

    d3 = params.dec3[1](params.dec3[0](e3))

    d2 = add(params.up32(bilinear_resize(d3, 2)), params.skip2(e2))
    d2 = params.dec2[1](params.dec2[0](d2))

    d1 = add(params.up21(bilinear_resize(d2, 2)), params.skip1(e1))
    d1 = params.dec1[1](params.dec1[0](d1))

    return StageFeatures(el_1=e1, el_2=e2, el_3=e3, dl_1=d1, dl_2=d2, dl_3=d3)
