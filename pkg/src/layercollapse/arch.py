"""Symbolic descriptors of reference vision architectures for parameter/MAC arithmetic.

Only layer dimensions are modelled; no weights. Counts follow the common
module-level convention: linear layers cost ``in * out`` MACs per token,
convolutions ``k^2 * c_in * c_out * H_out * W_out``. Normalisation,
activations, pooling and (by default) the two attention matrix products are
not counted, which is what per-module profilers report.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigError, UnknownArchitectureError, UnsupportedConfigurationError

NUM_CLASSES = 1000
IMAGE_SIZE = 224

VGG_CONFIGS = {
    "VGG11": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "VGG13": [64, 64, "M", 128, 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "VGG16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M",
              512, 512, 512, "M"],
    "VGG19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M",
              512, 512, 512, 512, "M"],
}

# width, depth, heads, mlp hidden
VIT_CONFIGS = {
    "ViT-T/16": (192, 12, 3, 768),
    "ViT-S/16": (384, 12, 6, 1536),
    "ViT-B/16": (768, 12, 12, 3072),
    "ViT-L/16": (1024, 24, 16, 4096),
}

# width, depth, token-mlp hidden, channel-mlp hidden
MIXER_CONFIGS = {
    "Mixer-B/16": (768, 12, 384, 3072),
    "Mixer-L/16": (1024, 24, 512, 4096),
}

FAMILIES = tuple(VGG_CONFIGS) + tuple(VIT_CONFIGS) + tuple(MIXER_CONFIGS)


@dataclass(frozen=True)
class Site:
    """One collapsible MLP: ``n_in -> n_hidden -> n_out`` applied ``kind``-wise.

    kind is ``dense`` (once per image), ``mlp`` (per token, ViT), ``channel``
    (per patch, Mixer) or ``token`` (per channel, Mixer).
    """

    n_in: int
    n_hidden: int
    n_out: int
    kind: str
    block: int

    def params_before(self) -> int:
        return self.n_in * self.n_hidden + self.n_hidden + self.n_hidden * self.n_out + self.n_out

    def params_after(self) -> int:
        return self.n_in * self.n_out + self.n_out

    def macs_before(self) -> int:
        return self.n_in * self.n_hidden + self.n_hidden * self.n_out

    def macs_after(self) -> int:
        return self.n_in * self.n_out


@dataclass(frozen=True)
class ArchDescriptor:
    family: str
    dims: dict = field(hash=False)
    collapsible_sites: tuple[Site, ...] = ()

    @property
    def kind(self) -> str:
        return self.family.split("-")[0].rstrip("0123456789").upper()


def _canonical(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_LOOKUP = {_canonical(f): f for f in FAMILIES}


def describe(family: str) -> ArchDescriptor:
    """Canonical descriptor for a family name (case and punctuation insensitive)."""
    key = _LOOKUP.get(_canonical(family))
    if key is None:
        raise UnknownArchitectureError(
            f"unknown architecture family {family!r}; known: {', '.join(FAMILIES)}")
    if key in VGG_CONFIGS:
        dims = {"features": VGG_CONFIGS[key], "pool_size": 7,
                "classifier": [512 * 7 * 7, 4096, 4096, NUM_CLASSES]}
        # Collapsing fc2+fc3 first, then fc1 into the fused map: 25088 -> 1000.
        sites = (Site(4096, 4096, NUM_CLASSES, "dense", 0),
                 Site(512 * 7 * 7, 4096, NUM_CLASSES, "dense", 0))
    elif key in VIT_CONFIGS:
        width, depth, heads, mlp = VIT_CONFIGS[key]
        dims = {"width": width, "depth": depth, "heads": heads, "mlp_hidden": mlp,
                "patch": 16, "image_size": IMAGE_SIZE}
        sites = tuple(Site(width, mlp, width, "mlp", b) for b in reversed(range(depth)))
    else:
        width, depth, tok, ch = MIXER_CONFIGS[key]
        n_patches = (IMAGE_SIZE // 16) ** 2
        dims = {"width": width, "depth": depth, "token_hidden": tok, "channel_hidden": ch,
                "patch": 16, "image_size": IMAGE_SIZE, "patches": n_patches}
        sites = []
        for b in reversed(range(depth)):
            sites.append(Site(width, ch, width, "channel", b))
            sites.append(Site(n_patches, tok, n_patches, "token", b))
        sites = tuple(sites)
    return ArchDescriptor(key, dims, sites)


# -- parameters ---------------------------------------------------------------

def _vgg_params(d: ArchDescriptor) -> int:
    total, c = 0, 3
    for v in d.dims["features"]:
        if v == "M":
            continue
        total += 9 * c * v + v
        c = v
    widths = d.dims["classifier"]
    for a, b in zip(widths, widths[1:]):
        total += a * b + b
    return total


def _vit_params(d: ArchDescriptor) -> int:
    w, depth, mlp, p = d.dims["width"], d.dims["depth"], d.dims["mlp_hidden"], d.dims["patch"]
    tokens = (d.dims["image_size"] // p) ** 2 + 1
    embed = 3 * p * p * w + w + w + tokens * w  # patch proj, cls token, position table
    block = (4 * w                      # two layer norms
             + w * 3 * w + 3 * w        # qkv
             + w * w + w                # attention output
             + w * mlp + mlp + mlp * w + w)
    return embed + depth * block + 2 * w + w * NUM_CLASSES + NUM_CLASSES


def _mixer_params(d: ArchDescriptor) -> int:
    w, depth, p = d.dims["width"], d.dims["depth"], d.dims["patch"]
    n, tok, ch = d.dims["patches"], d.dims["token_hidden"], d.dims["channel_hidden"]
    block = (4 * w
             + n * tok + tok + tok * n + n
             + w * ch + ch + ch * w + w)
    return 3 * p * p * w + w + depth * block + 2 * w + w * NUM_CLASSES + NUM_CLASSES


def count_descriptor_params(d: ArchDescriptor) -> int:
    return {"VGG": _vgg_params, "VIT": _vit_params, "MIXER": _mixer_params}[d.kind](d)


# -- MACs ---------------------------------------------------------------------

def _site_multiplicity(d: ArchDescriptor, site: Site, resolution: int) -> int:
    if site.kind == "dense":
        return 1
    if site.kind == "mlp":
        return (resolution // d.dims["patch"]) ** 2 + 1
    if site.kind == "channel":
        return d.dims["patches"]
    return d.dims["width"]


def _vgg_macs(d: ArchDescriptor, resolution: int, attention_products: bool) -> int:
    total, c, size = 0, 3, resolution
    for v in d.dims["features"]:
        if v == "M":
            size //= 2
            continue
        total += 9 * c * v * size * size
        c = v
    widths = d.dims["classifier"]
    return total + sum(a * b for a, b in zip(widths, widths[1:]))


def _vit_macs(d: ArchDescriptor, resolution: int, attention_products: bool) -> int:
    w, depth, mlp, p = d.dims["width"], d.dims["depth"], d.dims["mlp_hidden"], d.dims["patch"]
    patches = (resolution // p) ** 2
    tokens = patches + 1
    per_token = 3 * w * w + w * w + 2 * w * mlp
    block = tokens * per_token
    if attention_products:
        block += 2 * tokens * tokens * w
    return patches * 3 * p * p * w + depth * block + w * NUM_CLASSES


def _mixer_macs(d: ArchDescriptor, resolution: int, attention_products: bool) -> int:
    if resolution != d.dims["image_size"]:
        raise UnsupportedConfigurationError(
            f"{d.family} token-mixing MLPs are fixed to {d.dims['image_size']}px inputs")
    w, depth, p = d.dims["width"], d.dims["depth"], d.dims["patch"]
    n, tok, ch = d.dims["patches"], d.dims["token_hidden"], d.dims["channel_hidden"]
    block = w * 2 * n * tok + n * 2 * w * ch
    return n * 3 * p * p * w + depth * block + w * NUM_CLASSES


def count_descriptor_macs(d: ArchDescriptor, input_resolution: int = IMAGE_SIZE,
                          attention_products: bool = False) -> int:
    fn = {"VGG": _vgg_macs, "VIT": _vit_macs, "MIXER": _mixer_macs}[d.kind]
    return fn(d, input_resolution, attention_products)


# -- collapse arithmetic ------------------------------------------------------

def collapse_accounting(d: ArchDescriptor, layers_to_collapse: int,
                        input_resolution: int = IMAGE_SIZE,
                        attention_products: bool = False) -> tuple[int, int]:
    """Parameter and MAC totals after collapsing the last ``layers_to_collapse`` sites.

    Sites are taken in descriptor order, i.e. from the end of the network
    backward; for Mixer each block contributes its channel MLP then its token MLP.
    """
    if not 0 <= layers_to_collapse <= len(d.collapsible_sites):
        raise ConfigError(
            f"{d.family} has {len(d.collapsible_sites)} collapsible sites, "
            f"asked for {layers_to_collapse}")
    params = count_descriptor_params(d)
    macs = count_descriptor_macs(d, input_resolution, attention_products)
    for site in d.collapsible_sites[:layers_to_collapse]:
        params -= site.params_before() - site.params_after()
        macs -= _site_multiplicity(d, site, input_resolution) * (site.macs_before() - site.macs_after())
    return params, macs


def mlp_share(d: ArchDescriptor, input_resolution: int = IMAGE_SIZE) -> tuple[float, float]:
    """Fractions of parameters and MACs removed when every collapsible MLP is fused."""
    p0, m0 = collapse_accounting(d, 0, input_resolution)
    p1, m1 = collapse_accounting(d, len(d.collapsible_sites), input_resolution)
    return (p0 - p1) / p0, (m0 - m1) / m0


# Collapsed-layer counts reported for each family in the post-training study.
TABLE2_STEPS = {
    "ViT-T/16": (0, 1, 2, 3),
    "ViT-S/16": (0, 1, 2),
    "ViT-B/16": (0, 1, 2),
    "ViT-L/16": (0, 2),
    "Mixer-B/16": (0, 2, 4),
    "VGG19": (0, 2),
    "VGG16": (0, 2),
    "VGG13": (0, 2),
    "VGG11": (0, 2),
}

TABLE1_FAMILIES = ("ViT-T/16", "ViT-B/16", "ViT-L/16", "Mixer-B/16", "Mixer-L/16", "VGG16")
