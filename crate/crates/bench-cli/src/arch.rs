//! Baseline surface architectures, expressed as pins on the full solver.

use risee_core::ao::SolveOptions;
use risee_core::model::{PowerModel, SystemConfig};

/// Which surface hardware the solver is allowed to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Architecture {
    /// Full pipeline: both faces, per-sub-array amplifier switching.
    SubarrayDfa,
    /// Every amplifier powered; no on/off search.
    FullDfa,
    /// Amplifying reflect face only; transmit-side users keep their direct
    /// links but get no surface path.
    ActiveReflectOnly,
    /// Amplifying transmit face only; mirror image of the above.
    ActiveTransmitOnly,
    /// No amplifiers at all. The BS budget absorbs the surface budget so the
    /// total power available matches the active architectures.
    PassiveStar,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::SubarrayDfa,
        Architecture::FullDfa,
        Architecture::ActiveReflectOnly,
        Architecture::ActiveTransmitOnly,
        Architecture::PassiveStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SubarrayDfa => "subarray_dfa",
            Architecture::FullDfa => "full_dfa",
            Architecture::ActiveReflectOnly => "active_reflect_only",
            Architecture::ActiveTransmitOnly => "active_transmit_only",
            Architecture::PassiveStar => "passive_star",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Architecture::ALL.iter().copied().find(|a| a.name() == s)
    }

    pub fn power_model(self) -> PowerModel {
        match self {
            Architecture::PassiveStar => PowerModel::Passive,
            _ => PowerModel::Active,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Restricts a scenario and solver options to the given architecture.
///
/// The sweep value must already be applied to `cfg`: the passive baseline
/// folds the surface budget into the BS budget, so budget sweeps have to
/// land before the fold.
pub fn apply_architecture(
    mode: Architecture,
    cfg: &SystemConfig,
    opts: &SolveOptions,
) -> (SystemConfig, SolveOptions) {
    let mut cfg = cfg.clone();
    let mut opts = opts.clone();
    opts.power_model = mode.power_model();
    match mode {
        Architecture::SubarrayDfa => {}
        Architecture::FullDfa => {
            // All amplifiers stay on, so the smoothed-sparsity term and the
            // on/off search have nothing to decide.
            opts.sparsity = false;
            opts.ra_search = false;
        }
        Architecture::ActiveReflectOnly => {
            opts.beta_pin = Some(1.0);
            opts.optimize_beta = false;
            opts.sparsity = false;
            opts.ra_search = false;
        }
        Architecture::ActiveTransmitOnly => {
            opts.beta_pin = Some(0.0);
            opts.optimize_beta = false;
            opts.sparsity = false;
            opts.ra_search = false;
        }
        Architecture::PassiveStar => {
            opts.optimize_alpha = false;
            opts.sparsity = false;
            opts.ra_search = false;
            // Fairness rule: the passive surface spends nothing, so its
            // budget is handed to the transmitter.
            cfg.p_max_bs += cfg.p_max_ris;
        }
    }
    (cfg, opts)
}
