"""Weight averaging: epochs, soups and permutation-aligned merges."""

from .average import (
    SOUP_KEYS,
    Soup,
    SoupSpec,
    epoch_average,
    epoch_average_sweep,
    is_converged,
    load_trajectory,
    make_soups,
    soup_groups,
    uniform_average,
)
from .hungarian import linear_sum_assignment
from .rebasin import (
    PermutationSet,
    align_to,
    identity_perms,
    interpolate,
    interpolation_curve,
    permute_model,
    random_perms,
    rebasin_merge,
    weight_matching_align,
)

__all__ = [
    "PermutationSet",
    "align_to",
    "SOUP_KEYS",
    "Soup",
    "SoupSpec",
    "epoch_average",
    "epoch_average_sweep",
    "identity_perms",
    "interpolate",
    "interpolation_curve",
    "is_converged",
    "linear_sum_assignment",
    "load_trajectory",
    "make_soups",
    "permute_model",
    "random_perms",
    "rebasin_merge",
    "soup_groups",
    "uniform_average",
    "weight_matching_align",
]
