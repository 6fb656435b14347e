use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{gen_synthetic, init_tracker, track_from, Preset, SynthSpec, DEFAULT_PRECISION_RADIUS};
use crate::error::{Error, Result};
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AblationGroup {
    /// Fusion weight sweep, no attention, no template update.
    G1,
    /// Attention off and on at the default fusion weight.
    G2,
    /// Short-term template interval sweep.
    G3,
    /// Siamese score only, with and without template update.
    G4,
}

impl FromStr for AblationGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G1" | "g1" => Ok(Self::G1),
            "G2" | "g2" => Ok(Self::G2),
            "G3" | "g3" => Ok(Self::G3),
            "G4" | "g4" => Ok(Self::G4),
            _ => Err(Error::Config { line: 0, message: format!("unknown ablation group {s:?}") }),
        }
    }
}

impl fmt::Display for AblationGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl AblationGroup {
    /// Preset the group is evaluated on: fusion and attention on sequences
    /// with a distractor, template updates on deforming targets.
    pub fn default_preset(self) -> Preset {
        match self {
            Self::G1 | Self::G2 => Preset::Distractor,
            Self::G3 | Self::G4 => Preset::Deform,
        }
    }
}

/// `count` sequences of `preset` with seeds `seed, seed + 1, ...`.
pub fn suite(preset: Preset, count: usize, frames: usize, seed: u64) -> Vec<SynthSpec> {
    (0..count as u64).map(|i| SynthSpec::new(preset, frames, seed + i)).collect()
}

pub const G1_LAMBDAS: [f64; 7] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0];
pub const G3_INTERVALS: [usize; 3] = [1, 5, 10];

impl AblationGroup {
    /// Labelled configurations of the group, derived from `base`.
    pub fn settings(self, base: &TrackerConfig) -> Vec<(String, TrackerConfig)> {
        match self {
            Self::G1 => G1_LAMBDAS
                .iter()
                .map(|&l| {
                    let cfg = TrackerConfig { lambda_fusion: l, attention: false, template_update: false, ..base.clone() };
                    (format!("lambda={l:.1}"), cfg)
                })
                .collect(),
            Self::G2 => [false, true]
                .into_iter()
                .map(|att| {
                    let cfg = TrackerConfig { attention: att, template_update: false, ..base.clone() };
                    (format!("attention={}", if att { "on" } else { "off" }), cfg)
                })
                .collect(),
            Self::G3 => G3_INTERVALS
                .iter()
                .map(|&t| {
                    let cfg = TrackerConfig { template_interval: t, template_update: true, attention: true, ..base.clone() };
                    (format!("T={t}"), cfg)
                })
                .collect(),
            Self::G4 => [false, true]
                .into_iter()
                .map(|upd| {
                    let cfg = TrackerConfig {
                        lambda_fusion: 0.0,
                        attention: false,
                        template_update: upd,
                        template_interval: 5,
                        ..base.clone()
                    };
                    (if upd { "lambda=0.0,T=5".to_string() } else { "lambda=0.0,T=-".to_string() }, cfg)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub mean_iou: f64,
    pub auc: f64,
    pub precision: f64,
    /// Mean IoU of every sequence, in suite order.
    pub per_sequence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub group: String,
    pub sequences: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.setting.len()).max().unwrap_or(0).max(7);
        let mut out = format!("group {} over {} sequences\n", self.group, self.sequences.len());
        out.push_str(&format!("{:<width$}  {:>8}  {:>8}  {:>9}\n", "setting", "mean_iou", "auc", "precision"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}  {:>9.4}\n",
                r.setting, r.mean_iou, r.auc, r.precision
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Tracks every suite sequence under every labelled configuration. Sequences
/// are initialised once per distinct attention setting and the state is
/// shared by all configurations with that setting, since nothing else
/// affects initialisation.
pub fn run_settings(group: &str, settings: &[(String, TrackerConfig)], suite: &[SynthSpec]) -> Result<AblationReport> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("ablation suite is empty".into()));
    }
    let n = suite.len() as f64;
    let mut sums = vec![(0.0, 0.0, 0.0); settings.len()];
    let mut per_sequence = vec![Vec::with_capacity(suite.len()); settings.len()];
    for spec in suite {
        let seq = gen_synthetic(spec)?;
        let mut inits = Vec::new();
        for (i, (_, cfg)) in settings.iter().enumerate() {
            let cached = inits.iter().find(|(att, _)| *att == cfg.attention).map(|(_, s)| s);
            let state = match cached {
                Some(s) => Clone::clone(s),
                None => {
                    let s = init_tracker(&seq, cfg, spec.seed)?;
                    inits.push((cfg.attention, s.clone()));
                    s
                }
            };
            let run = track_from(state, &seq, cfg, DEFAULT_PRECISION_RADIUS)?;
            sums[i].0 += run.summary.mean_iou;
            sums[i].1 += run.summary.auc;
            sums[i].2 += run.summary.precision;
            per_sequence[i].push(run.summary.mean_iou);
        }
    }
    let rows = settings
        .iter()
        .zip(sums)
        .zip(per_sequence)
        .map(|(((label, _), (iou, auc, pr)), per)| AblationRow {
            setting: label.clone(),
            mean_iou: iou / n,
            auc: auc / n,
            precision: pr / n,
            per_sequence: per,
        })
        .collect();
    Ok(AblationReport { group: group.to_string(), sequences: suite.iter().map(SynthSpec::name).collect(), rows })
}

/// Runs one ablation group over a suite of synthetic sequences.
pub fn run_ablation(group: AblationGroup, base_cfg: &TrackerConfig, suite: &[SynthSpec]) -> Result<AblationReport> {
    run_settings(&group.to_string(), &group.settings(base_cfg), suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_shapes() {
        let base = TrackerConfig::default();
        assert_eq!(AblationGroup::G1.settings(&base).len(), 7);
        assert_eq!(AblationGroup::G2.settings(&base).len(), 2);
        assert_eq!(AblationGroup::G3.settings(&base).len(), 3);
        let g1 = AblationGroup::G1.settings(&base);
        assert_eq!(g1[4].0, "lambda=0.8");
        assert!(g1.iter().all(|(_, c)| !c.template_update && !c.attention));
        let g4 = AblationGroup::G4.settings(&base);
        assert!(g4.iter().all(|(_, c)| c.lambda_fusion == 0.0));
        assert!("G5".parse::<AblationGroup>().is_err());
        assert_eq!("g3".parse::<AblationGroup>().unwrap(), AblationGroup::G3);
    }

    #[test]
    fn empty_suite_is_rejected() {
        assert!(run_ablation(AblationGroup::G2, &TrackerConfig::default(), &[]).is_err());
    }
}
