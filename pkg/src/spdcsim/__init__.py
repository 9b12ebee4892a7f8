"""Monte Carlo simulation and analysis of pulsed photon-pair sources."""

__version__ = "0.1.0"

from .physics import (
    ChannelParams,
    GainParams,
    HomProfileParams,
    PairSourceModel,
    PolarizationType,
    car_model,
    g2_from_modes,
    hom_profile,
    modes_from_g2,
    pair_count_distribution,
    singlet_outcome_probs,
    spdc_efficiency_lowpower,
    spdc_power,
)
from .montecarlo import (
    BellGeometry,
    CoincidenceGeometry,
    ExperimentConfig,
    HbtGeometry,
    HomGeometry,
    TagStream,
    simulate,
)
from .timetags import CoincidenceHistogram, car_from_histogram, coincidence_histogram, rebin
from .estimators import (
    BellCounts,
    chsh_S,
    fit_car_curve,
    fit_hom_dip,
    fit_spdc_power,
    g2_zero_estimate,
    optimal_chsh_angles,
)
from .fitting import FitError, FitReport
