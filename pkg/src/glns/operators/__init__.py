"""Operator registry wiring and portfolio presets."""

from ..problems import CVRP, OVRP, TSP
from .base import (BUILTINS, DESTROY, REPAIR, BuiltinImpl, DestroyOutcome,
                   OperatorRecord, SourceImpl, builtin_record, check_removal_count,
                   destroy_count, make_callable, register, solution_elements)
from .classic import (greedy_insertion, random_removal, regret_k_insertion,
                      related_removal, worst_removal)
from .discovered import acagi_repair, acsr_destroy, dapi_repair, pswr_destroy

register("random_removal", DESTROY, random_removal,
         defaults={"q_related": 0.0}, param_space={"q_related": (0.0, 0.4)})
register("worst_removal", DESTROY, worst_removal,
         defaults={"noise": 0.0}, param_space={"noise": (0.0, 0.5)})
register("related_removal", DESTROY, related_removal,
         defaults={"power": 0.0}, param_space={"power": (0.0, 8.0)})
register("acsr_destroy", DESTROY, acsr_destroy,
         defaults={"greedy_prob": 0.7, "moderate_frac": 0.4, "seg_frac": 0.3},
         param_space={"greedy_prob": (0.3, 0.95), "moderate_frac": (0.2, 0.6),
                      "seg_frac": (0.1, 0.5)})
register("pswr_destroy", DESTROY, pswr_destroy,
         defaults={"top_k": 3}, param_space={"top_k": (2, 6)})

register("greedy_insertion", REPAIR, greedy_insertion,
         defaults={"noise": 0.0}, param_space={"noise": (0.0, 0.3)})
register("regret_insertion", REPAIR,
         lambda partial, removed, instance, rng, k=2: regret_k_insertion(
             partial, removed, instance, k=int(k), rng=rng),
         defaults={"k": 2}, param_space={"k": (2, 4)})
register("dapi_repair", REPAIR, dapi_repair,
         defaults={"base_rand": 0.1, "rand_spread": 0.4, "temp_base": 3.0,
                   "temp_slope": 2.0, "softmax_prob": 0.8,
                   "two_opt_base": 0.2, "two_opt_slope": 0.5},
         param_space={"base_rand": (0.02, 0.3), "rand_spread": (0.1, 0.6),
                      "temp_base": (1.5, 4.0), "temp_slope": (0.5, 2.5),
                      "softmax_prob": (0.5, 0.95), "two_opt_base": (0.0, 0.5),
                      "two_opt_slope": (0.0, 0.8)})
register("acagi_repair", REPAIR, acagi_repair,
         defaults={"load_pen": 0.15, "len_pen": 0.05, "len_div": 20.0,
                   "explore_lo": 0.2, "explore_hi": 0.4, "difficulty_frac": 0.3,
                   "decay": 0.8, "greedy_base": 0.8, "greedy_slope": 0.2,
                   "merge_len": 15, "consolidate": True},
         param_space={"load_pen": (0.0, 0.4), "len_pen": (0.0, 0.2),
                      "explore_lo": (0.05, 0.35), "explore_hi": (0.2, 0.6),
                      "difficulty_frac": (0.1, 0.5), "decay": (0.5, 0.95),
                      "greedy_base": (0.6, 0.95), "merge_len": (8, 25)})

# Classical portfolio used by the ALNS baseline, and the discovered pairs.
CLASSIC_DESTROY = ("random_removal", "worst_removal", "related_removal")
CLASSIC_REPAIR = ("greedy_insertion", "regret_insertion")
DISCOVERED_PAIR = {
    TSP: ("acsr_destroy", "dapi_repair"),
    CVRP: ("pswr_destroy", "acagi_repair"),
    OVRP: ("pswr_destroy", "acagi_repair"),
}
SEED_DESTROY = ("random_removal", "worst_removal")
SEED_REPAIR = ("greedy_insertion",)


def builtin_names_for(kind: str, role: str) -> tuple[str, ...]:
    """Every builtin valid for a problem kind, classic seeds first."""
    special = DISCOVERED_PAIR[kind]
    if role == DESTROY:
        return CLASSIC_DESTROY + (special[0],)
    return CLASSIC_REPAIR + (special[1],)
