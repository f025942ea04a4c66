//! Experiment configuration, loaded from and echoed back to TOML.

use hycon::data::{SplitSpec, SyntheticSpec};
use hycon::losses::{BaselineKind, LossConfig, RatioForm};
use hycon::pipeline::FusionKind;
use hycon::train::TrainConfig;
use hycon::HyperParams;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Name of the effective config written into every output directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Replicate seeds. Each seed fixes model initialization, batch order,
    /// the train/val/test split and, for synthetic data, the generator.
    pub seeds: Vec<u64>,
    pub fusion: FusionKind,
    /// Replaces the intra- and inter-modal losses; the toggles must then be
    /// left at their defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_loss: Option<BaselineKind>,
    pub hyperparams: HyperParams,
    pub loss: LossToggles,
    pub data: DataSource,
    pub split: SplitSpec,
    pub sweep: SweepGrid,
    pub gradcheck: GradcheckSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs"),
            seeds: vec![0, 1, 2, 3, 4],
            fusion: FusionKind::Addition,
            baseline_loss: None,
            hyperparams: HyperParams::default(),
            loss: LossToggles::default(),
            data: DataSource::default(),
            split: SplitSpec::default(),
            sweep: SweepGrid::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossToggles {
    pub enable_scl: bool,
    pub enable_iamcl: bool,
    pub enable_iemcl: bool,
    pub enable_refinement: bool,
    pub ratio_form: RatioForm,
    pub fuse_normalized: bool,
    pub hinged_triplet: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        let l = LossConfig::default();
        LossToggles {
            enable_scl: l.enable_scl,
            enable_iamcl: l.enable_iamcl,
            enable_iemcl: l.enable_iemcl,
            enable_refinement: l.enable_refinement,
            ratio_form: l.ratio_form,
            fuse_normalized: true,
            hinged_triplet: l.hinged_triplet,
        }
    }
}

impl LossToggles {
    pub fn all_off() -> Self {
        LossToggles {
            enable_scl: false,
            enable_iamcl: false,
            enable_iemcl: false,
            enable_refinement: false,
            ..LossToggles::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// A feature table written by `generate` or by hand.
    File {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Grid for the `sweep` command. Empty lists fall back to the single value
/// in `hyperparams`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    /// `[lambda1, lambda2, lambda3]` triples.
    pub lambdas: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSettings {
    pub tol: f64,
    /// Number of seeded batches per loss.
    pub batches: u64,
    pub k: usize,
    pub d: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            tol: 1e-4,
            batches: 20,
            k: 8,
            d: 6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.hyperparams.violations();
        out.extend(self.split.violations());
        if let DataSource::Synthetic(spec) = &self.data {
            out.extend(spec.violations());
        }
        if self.seeds.is_empty() {
            out.push("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            out.push("seeds must not repeat".into());
        }
        if self.seeds.iter().any(|&s| i64::try_from(s).is_err()) {
            out.push("seeds must fit in a signed 64-bit integer".into());
        }
        if let Some(b) = self.baseline_loss {
            let t = &self.loss;
            if !(t.enable_scl && t.enable_iamcl && t.enable_iemcl) {
                out.push(format!(
                    "baseline_loss = \"{b}\" replaces the contrastive terms; \
                     leave enable_scl, enable_iamcl and enable_iemcl at true"
                ));
            }
        }
        if let Err(e) = self.fusion.fused_width(self.hyperparams.d) {
            out.push(e.to_string());
        }
        for &a in &self.sweep.alphas {
            if !(0.0..=1.0).contains(&a) {
                out.push(format!("sweep.alphas entry {a} must lie in [0, 1]"));
            }
        }
        for l in &self.sweep.lambdas {
            if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                out.push(format!("sweep.lambdas entry {l:?} must be nonnegative"));
            }
        }
        let g = &self.gradcheck;
        if !(g.tol > 0.0 && g.tol.is_finite()) {
            out.push(format!("gradcheck.tol = {} must be positive", g.tol));
        }
        if g.batches == 0 || g.k < 2 || g.d == 0 {
            out.push("gradcheck needs batches ≥ 1, k ≥ 2 and d ≥ 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v.join("\n")))
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        let t = &self.loss;
        LossConfig {
            enable_scl: t.enable_scl,
            enable_iamcl: t.enable_iamcl,
            enable_iemcl: t.enable_iemcl,
            enable_refinement: t.enable_refinement,
            ratio_form: t.ratio_form,
            baseline: self.baseline_loss,
            hinged_triplet: t.hinged_triplet,
        }
    }

    /// Training settings for one replicate seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(HyperParams {
            seed,
            ..self.hyperparams.clone()
        });
        cfg.fusion = self.fusion;
        cfg.loss = self.loss_config();
        cfg.fuse_normalized = self.loss.fuse_normalized;
        cfg
    }
}
