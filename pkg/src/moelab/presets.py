"""Shipped parameter presets for the load- and score-aware router.

Each preset carries the published per-band thresholds for one (model,
dataset) pair, given as (early, middle, final) triples, together with the
model's expert count and activation width. Band index ranges are not part
of the presets: layer-band boundaries default to thirds of the layer count
(early = first floor(L/3) layers, final = last floor(L/3), middle = the
rest). That split is a package default, not a published value; override the
bands in the experiment config when the model calls for different cuts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .routing import Band, BandParams, LaserParams, TrimMode


@dataclass(frozen=True)
class Preset:
    name: str
    model: str
    dataset: str
    k: int
    num_experts: int
    t_fix: tuple[float, float, float]        # early / middle / final
    eps_high: tuple[float, float, float]     # early / middle / final


_MIXTRAL = dict(model="mixtral-8x7b", k=2, num_experts=8)
_DEEPSEEK = dict(model="deepseek-moe-16b-chat", k=6, num_experts=64)

PRESETS: dict[str, Preset] = {p.name: p for p in (
    Preset(name="mixtral-gsm8k", dataset="gsm8k",
           t_fix=(0.60, 0.60, 0.60), eps_high=(0.72, 0.75, 0.80), **_MIXTRAL),
    Preset(name="mixtral-mmlu", dataset="mmlu",
           t_fix=(0.40, 0.40, 0.40), eps_high=(0.7159, 0.6419, 0.6285), **_MIXTRAL),
    Preset(name="mixtral-arc-easy", dataset="arc-easy",
           t_fix=(0.60, 0.60, 0.60), eps_high=(0.7159, 0.6419, 0.6285), **_MIXTRAL),
    Preset(name="mixtral-arc-challenge", dataset="arc-challenge",
           t_fix=(0.60, 0.60, 0.60), eps_high=(0.7159, 0.6419, 0.6285), **_MIXTRAL),
    Preset(name="deepseek-gsm8k", dataset="gsm8k",
           t_fix=(0.25, 0.45, 0.55), eps_high=(0.30, 0.30, 0.30), **_DEEPSEEK),
    Preset(name="deepseek-mmlu", dataset="mmlu",
           t_fix=(0.80, 0.80, 0.80), eps_high=(0.40, 0.40, 0.40), **_DEEPSEEK),
    Preset(name="deepseek-arc-easy", dataset="arc-easy",
           t_fix=(0.80, 0.80, 0.80), eps_high=(0.35, 0.35, 0.35), **_DEEPSEEK),
    Preset(name="deepseek-arc-challenge", dataset="arc-challenge",
           t_fix=(0.80, 0.80, 0.80), eps_high=(0.40, 0.40, 0.40), **_DEEPSEEK),
)}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; available: {known}") from None


def thirds_bands(num_layers: int) -> list[tuple[int, int]]:
    """Default early/middle/final split: floor(L/3) at each end.

    Degenerates gracefully for tiny layer counts (fewer than three layers
    collapse into a single middle band).
    """
    if num_layers < 1:
        raise ConfigError("num_layers must be >= 1")
    edge = num_layers // 3
    ranges = []
    if edge > 0:
        ranges.append((0, edge - 1))
    ranges.append((edge, num_layers - edge - 1))
    if edge > 0:
        ranges.append((num_layers - edge, num_layers - 1))
    return ranges


def band_params_from_preset(
    preset: Preset,
    num_layers: int,
    c: int | None = None,
    trim_mode: TrimMode = TrimMode.TOP,
    rng_seed: int = 0,
) -> BandParams:
    """Build band parameters from a preset for a model with ``num_layers``.

    ``c`` defaults to min(k + 2, num_experts), the widest working set in the
    published sweeps for the small-expert model.
    """
    if c is None:
        c = min(preset.k + 2, preset.num_experts)
    ranges = thirds_bands(num_layers)
    # With fewer than 3 bands (tiny models) use the middle-band values.
    if len(ranges) == 3:
        triple = (0, 1, 2)
    else:
        triple = (1,) * len(ranges)
    bands = tuple(
        Band(lo, hi, LaserParams(
            k=preset.k, eps_high=preset.eps_high[which], t_fix=preset.t_fix[which],
            c=c, trim_mode=trim_mode, rng_seed=rng_seed))
        for (lo, hi), which in zip(ranges, triple))
    return BandParams(bands, num_layers)
