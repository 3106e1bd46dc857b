"""Relational judgments: validity, weakest preconditions and derivations."""

from .derivation import (
    ALL_CONTRACTIONS,
    DUALITY_Y,
    MEASUREMENT_YK,
    RULES,
    Derivation,
    DerivationReport,
    Judgment,
    NodeFailure,
    ParameterFamily,
    check_derivation,
    derivation_from_json,
    derivation_to_json,
    in_duality_y,
    normalize,
    random_derivation,
    same_program,
    sample_contractions,
    sample_duality_y,
)
from .measurement import (
    entailment_check,
    entailment_via_logic,
    in_measurement_yk,
    measurement_condition,
    measurement_property_check,
    measurement_property_sampled,
    measurement_property_value,
    outcome_probabilities,
    pqrhl_check,
    pqrhl_coupling_exists,
    pqrhl_embedded,
    rqpd_check,
    rqpd_embedded,
    rqpd_margin,
    sample_measurement_yk,
    sample_pairs,
)
from .validity import (
    INVALID,
    UNKNOWN,
    VALID,
    NonAstWarning,
    Verdict,
    channel,
    channels,
    check_split_valid,
    check_valid_general,
    duality_instance_valid,
    falsify,
    output_margin,
    split_decompose,
    split_predicate,
    wp_one_sided,
    wp_two_sided,
)
