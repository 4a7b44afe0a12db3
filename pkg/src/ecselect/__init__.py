"""Channel ranking for multichannel time series from directed coupling.

Windowed vector-autoregressive models are fit per analysis window,
evaluated in the frequency domain into directed coupling metrics (DTF
family and PDC family), collapsed over a band and window range, and
turned into a per-channel importance ranking.  A CSP + SVM pipeline
measures classification accuracy as a function of how many top-ranked
channels are kept.
"""

from .epochs import (BandSpec, ChannelMeta, EpochSet, bandpass_filter,
                     ensemble_normalize, load_epochs, save_epochs, segment)
from .errors import ConfigError, EcselectError, FormatError, NumericalError
from .icec import (BandWindow, IcecReport, SelectionResult, band_presets,
                   band_window, collapse, select_channels)
from .mvar import (OrderSelection, ValidationReport, VarModel,
                   WindowedVarModels, consistency_check, fit_vieira_morf,
                   fit_windowed, select_order, stability_check, validate,
                   whiteness_check)
from .spectral import (ConnectivityTensor, FrequencyGrid, SpectralMatrices,
                       compute_connectivity, default_grid, dtf, ddtf,
                       evaluate_spectrum, ffdtf, gpdc, load_tensor,
                       partial_coherence, pdc, process_covariance, rpdc,
                       save_tensor)
from .evalpipe import (CspModel, EvaluationReport, SvmModel, csp_features,
                       csp_fit, csp_fit_multiclass, evaluate_selection,
                       run_csp_svm, svm_train)
from .synthoracle import (GroundTruthSpec, gen_labeled_csp_dataset,
                          gen_var_epochs, monte_carlo_process_covariance,
                          oracle_icec)

from . import icec  # noqa: E402  (submodule; its main entry point is icec.icec)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
