"""Reference models and synthetic photon streams for driven two-level emitters."""

from .bloch import (
    TwoLevelParams,
    bin_average,
    bloch_steady_state,
    coherent_fraction,
    excited_population,
    inelastic_spectrum,
    resonant_g2_closed_form,
    saturation_excited_pop,
    single_atom_g1,
    single_atom_g2,
)
from .fewatom import EnsembleGeometry, FewAtomCorrelators, fewatom_collective_correlators, kubo_fourth
from .streams import (
    FieldTrace,
    apply_dead_time,
    chaotic_field,
    chaotic_stream,
    coherent_admixture,
    concat_streams,
    mcwf_photon_stream,
    nongaussian_fixture,
    sample_photons,
)

__all__ = [
    "TwoLevelParams",
    "bin_average",
    "bloch_steady_state",
    "coherent_fraction",
    "excited_population",
    "inelastic_spectrum",
    "resonant_g2_closed_form",
    "saturation_excited_pop",
    "single_atom_g1",
    "single_atom_g2",
    "EnsembleGeometry",
    "FewAtomCorrelators",
    "fewatom_collective_correlators",
    "kubo_fourth",
    "FieldTrace",
    "apply_dead_time",
    "chaotic_field",
    "chaotic_stream",
    "coherent_admixture",
    "concat_streams",
    "mcwf_photon_stream",
    "nongaussian_fixture",
    "sample_photons",
]
