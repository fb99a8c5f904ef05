"""Maximum-entropy weighted ensemble of the international trade network."""

__version__ = "0.1.0"

from .analysis import (FrBin, FrPoint, FrPoints, StrengthFit, VolumeHistogram,  # noqa: E402
                       flow_cloud, fr_bin_points, fr_points, fr_report, strength_fit,
                       volume_distribution)
from .ensemble import (EnsembleParams, PairField, expected_strengths, expected_weight,  # noqa: E402
                       fit_params, fr_identity_check, fr_predict, hamiltonian,
                       link_weight_density, log_partition)
from .ingest import (FlowRecord, GdpRecord, RelativeView, Snapshot, build_snapshot,  # noqa: E402
                     parse_flows, parse_gdp, relative_view)
from .sampler import (ChainConfig, SampledGraph, chain_diagnostics, metropolis_run,  # noqa: E402
                      run_chain, sample_direct)
