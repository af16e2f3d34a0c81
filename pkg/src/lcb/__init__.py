"""Logistic continuous-state branching processes: analytics, simulation, verification."""

from .mechanism import (
    JumpMeasure,
    Mechanism,
    RegimeReport,
    classify,
    psi_eval,
    psi_inverse,
    psi_prime,
    psi_prime_at_zero,
    stable_mechanism,
    neveu_mechanism,
    feller_mechanism,
    slow_log_mechanism,
)
from .analytic import (
    ScaleTable,
    HTransform,
    build_scale_table,
    build_h_transform,
    compute_ell,
    h_eval,
    h_prime_eval,
    f_theta_eval,
    coefficients,
    generator_apply,
    generator_up_apply,
)
from .paths import (
    SimConfig,
    Path,
    STATUS_NAMES,
    simulate_levy,
    simulate_gou_and_timechange,
    simulate_lcb_euler,
    simulate_U,
    simulate_V,
    simulate_V_down,
    simulate_conditioned,
    weighted_unconditioned,
    simulate_cb_conditioned,
)
from .montecarlo import (
    McEstimate,
    Verdict,
    collect_campaign,
    mc_mean,
    check_laplace_duality,
    check_siegmund_duality,
    check_biduality,
    check_h_supermartingale,
    check_infimum_law,
    check_progeny_lt,
    check_lifetime_exponential,
    check_killing_dichotomy,
    check_conditioning_limit,
    check_two_constructions,
    check_entrance_from_zero,
)
from .config import CampaignSpec, RunSpec, load_config, mechanism_from_dict

__all__ = [
    "JumpMeasure",
    "Mechanism",
    "RegimeReport",
    "classify",
    "psi_eval",
    "psi_inverse",
    "psi_prime",
    "psi_prime_at_zero",
    "stable_mechanism",
    "neveu_mechanism",
    "feller_mechanism",
    "slow_log_mechanism",
    "ScaleTable",
    "HTransform",
    "build_scale_table",
    "build_h_transform",
    "compute_ell",
    "h_eval",
    "h_prime_eval",
    "f_theta_eval",
    "coefficients",
    "generator_apply",
    "generator_up_apply",
    "SimConfig",
    "Path",
    "STATUS_NAMES",
    "simulate_levy",
    "simulate_gou_and_timechange",
    "simulate_lcb_euler",
    "simulate_U",
    "simulate_V",
    "simulate_V_down",
    "simulate_conditioned",
    "weighted_unconditioned",
    "simulate_cb_conditioned",
    "McEstimate",
    "Verdict",
    "collect_campaign",
    "mc_mean",
    "check_laplace_duality",
    "check_siegmund_duality",
    "check_biduality",
    "check_h_supermartingale",
    "check_infimum_law",
    "check_progeny_lt",
    "check_lifetime_exponential",
    "check_killing_dichotomy",
    "check_conditioning_limit",
    "check_two_constructions",
    "check_entrance_from_zero",
    "CampaignSpec",
    "RunSpec",
    "load_config",
    "mechanism_from_dict",
]

__version__ = "0.1.0"
