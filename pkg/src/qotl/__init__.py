"""Relational verification of quantum while-programs through quantum optimal transport.

Subpackages and modules:

``linalg``        dense Hermitian linear algebra, subspaces, symmetric projectors
``sdp``           interior-point solver for complex block SDPs
``predicates``    infinite-valued predicates
``qwhile``        program syntax, parser and denotational semantics
``transport``     optimal transport over (partial) couplings with dual certificates
``logic``         judgments, validity, derivation checking, measurement properties
``applications``  equivalence, distances, non-interference and privacy checkers
``cli``           command-line front end
"""

from .applications import (
    QuantumSystemSpec,
    diamond_distance,
    diamond_encoding,
    dp_check,
    non_interference_check,
    program_equiv,
    td_encoding_check,
    trace_distance,
    wasserstein_lipschitz_check,
)
from .logic import (
    Derivation,
    Judgment,
    Verdict,
    check_derivation,
    check_split_valid,
    check_valid_general,
    wp_two_sided,
)
from .qwhile import Environment, Superoperator, denote, parse
from .transport import lifting_check, partial_strassen_check, t_stab, transport_value

__version__ = "0.1.0"

__all__ = [
    "QuantumSystemSpec",
    "diamond_distance",
    "diamond_encoding",
    "dp_check",
    "non_interference_check",
    "program_equiv",
    "td_encoding_check",
    "trace_distance",
    "wasserstein_lipschitz_check",
    "Derivation",
    "Judgment",
    "Verdict",
    "check_derivation",
    "check_split_valid",
    "check_valid_general",
    "wp_two_sided",
    "Environment",
    "Superoperator",
    "denote",
    "parse",
    "lifting_check",
    "partial_strassen_check",
    "t_stab",
    "transport_value",
]
