from .mdp import (
    TabularMdp,
    TabularPolicy,
    TabularDataset,
    ValueTable,
    policy_evaluation,
    optimal_values,
    kl_divergence,
)
from .empirical import EmpiricalModels, empirical_models
from .correction import (
    ValueAwareTransition,
    RegularizerSpec,
    InstanceTooLargeError,
    value_aware_transition,
    closed_form_policy,
    regularizer_value,
    brute_force_maximizer,
    support_violation,
)
from .verify import TabularInstance, VerificationReport, random_instance, verify_propositions

__all__ = [
    "TabularMdp",
    "TabularPolicy",
    "TabularDataset",
    "ValueTable",
    "policy_evaluation",
    "optimal_values",
    "kl_divergence",
    "EmpiricalModels",
    "empirical_models",
    "ValueAwareTransition",
    "RegularizerSpec",
    "InstanceTooLargeError",
    "value_aware_transition",
    "closed_form_policy",
    "regularizer_value",
    "brute_force_maximizer",
    "support_violation",
    "TabularInstance",
    "VerificationReport",
    "random_instance",
    "verify_propositions",
]
