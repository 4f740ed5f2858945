from .base import (
    BoundaryParamSpec,
    PerturbationContext,
    PerturbationInstance,
    PerturbationModule,
    instantiate,
    module_class,
    override_spec_parameter,
    registered_types,
    resolve_searchable,
    searchable_params,
)
from .pipeline import (
    PerturbedSequence,
    perturb_sequence,
    perturbed_output_root,
    run_perturbation_pipeline,
)
from . import camera, transport, weather  # noqa: F401  (module registration)

__all__ = [
    "BoundaryParamSpec",
    "PerturbationContext",
    "PerturbationInstance",
    "PerturbationModule",
    "instantiate",
    "module_class",
    "override_spec_parameter",
    "registered_types",
    "resolve_searchable",
    "searchable_params",
    "PerturbedSequence",
    "perturb_sequence",
    "perturbed_output_root",
    "run_perturbation_pipeline",
]
