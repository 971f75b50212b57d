//! Effect estimation, effect sizes, power and group comparisons.

mod estimators;
pub mod linalg;
mod panel;
mod power;
mod stats;

pub use estimators::{
    bootstrap_replicates, doubly_robust_effect, estimate_effect, fit_propensity, logistic_irls, ols_effect,
    quantile_sorted, raw_effect, BootstrapConfig, EffectEstimate, EffectMethod, OutcomePanel, PanelRow, IRLS_MAX_ITER,
    PROPENSITY_CLIP,
};
pub use panel::{
    build_outcome_panel, covariate_names, load_panel, read_panel_csv, save_panel, write_panel_csv, OutcomeKind,
    PanelBuildStats, PanelSpec, PanelUnit, UnitKind, AUTHOR_COVARIATES, DEFAULT_POST_WEEKS, DEFAULT_PRE_WEEKS,
    SITE_COVARIATES,
};
pub use power::{noncentral_t_cdf, power_at, required_sample_size, PowerRequest, MAX_SAMPLE, MIN_SAMPLE};
pub use stats::{
    cles, effect_size, group_difference_report, mann_whitney_u, mean, pooled_sd, sample_sd, welch_p_value,
    EffectSizeInput, GroupDifference,
};
