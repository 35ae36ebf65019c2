use std::path::{Path, PathBuf};

use bodf::export::GridSpec;
use bodf::io::{AngleUnit, InputFormat};
use bodf::kde::DEFAULT_LOO_CAP;
use bodf::mixture::Hyperparams;
use bodf::normalizer::{NormalizerTable, DEFAULT_LAMBDA_MAX, DEFAULT_NODES};
use bodf::predict::BandwidthPolicy;
use bodf::quat::GROUP_CATALOG;
use bodf::rjmcmc::SamplerConfig;
use bodf::tempering::{SwapRule, TemperatureLadder};
use bodf::SymmetryGroup;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpdConfig {
    /// Number of predictive draws; 10000 when unset.
    pub n_new: Option<usize>,
    pub bandwidth: BandwidthPolicy,
}

impl Default for PpdConfig {
    fn default() -> Self {
        PpdConfig {
            n_new: None,
            bandwidth: BandwidthPolicy::CrossValidated { cap: DEFAULT_LOO_CAP },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    /// Fixed concentration; cross-validated when unset.
    pub kappa: Option<f64>,
    pub loo_cap: usize,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            kappa: None,
            loo_cap: DEFAULT_LOO_CAP,
        }
    }
}

/// Everything a run needs. Relative paths resolve against the working
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: InputFormat,
    pub angle_unit: AngleUnit,
    /// Catalog name or path to a group file.
    pub crystal: String,
    pub specimen: String,
    pub hyperparams: Hyperparams,
    pub sampler: SamplerConfig,
    pub ladder: TemperatureLadder,
    pub swap_rule: SwapRule,
    pub forced_uniform: bool,
    /// Prebuilt normalizer table; built in memory from the two fields below
    /// when unset.
    pub table: Option<PathBuf>,
    pub table_lambda_max: f64,
    pub table_nodes: usize,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ppd: PpdConfig,
    pub kde: KdeConfig,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            format: InputFormat::QuaternionCsv,
            angle_unit: AngleUnit::Radians,
            crystal: "cubic-24".into(),
            specimen: "cyclic-2".into(),
            hyperparams: Hyperparams::default(),
            sampler: SamplerConfig::default(),
            ladder: TemperatureLadder::ten_rung(),
            swap_rule: SwapRule::Corrected,
            forced_uniform: false,
            table: None,
            table_lambda_max: DEFAULT_LAMBDA_MAX,
            table_nodes: DEFAULT_NODES,
            out: None,
            seed: None,
            ppd: PpdConfig::default(),
            kde: KdeConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

/// Fields a command cannot run without.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub data: bool,
    pub seed: bool,
    pub out: bool,
    pub table: bool,
}

pub fn load_group(spec: &str) -> Result<SymmetryGroup, String> {
    if GROUP_CATALOG.contains(&spec) {
        return SymmetryGroup::named(spec).map_err(|e| e.to_string());
    }
    let p = Path::new(spec);
    if p.is_file() {
        return SymmetryGroup::from_file(p).map_err(|e| e.to_string());
    }
    Err(format!(
        "symmetry group `{spec}` is neither a catalog name ({}) nor an existing file",
        GROUP_CATALOG.join(", ")
    ))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self, needs: Needs) -> Vec<String> {
        let mut out = Vec::new();
        if needs.seed && self.seed.is_none() {
            out.push("seed is required (set `seed` in the config or pass --seed)".into());
        }
        if needs.out && self.out.is_none() {
            out.push("output directory is required (set `out` or pass --out)".into());
        }
        if needs.data {
            match &self.data {
                None => out.push("data file is required (set `data` or pass --data)".into()),
                Some(p) if !p.is_file() => out.push(format!("data file {} does not exist", p.display())),
                _ => {}
            }
        }
        if needs.table {
            if let Some(p) = &self.table {
                if !p.is_file() {
                    out.push(format!("table file {} does not exist", p.display()));
                }
            } else {
                if !(self.table_lambda_max.is_finite() && self.table_lambda_max > 0.0) {
                    out.push(format!("table_lambda_max = {} must be positive", self.table_lambda_max));
                }
                if self.table_nodes < 8 {
                    out.push(format!("table_nodes = {} must be at least 8", self.table_nodes));
                }
            }
        }
        for (role, spec) in [("crystal", &self.crystal), ("specimen", &self.specimen)] {
            if let Err(e) = load_group(spec) {
                out.push(format!("{role}: {e}"));
            }
        }
        out.extend(self.hyperparams.problems().into_iter().map(|p| format!("hyperparams: {p}")));
        out.extend(self.sampler.problems().into_iter().map(|p| format!("sampler: {p}")));
        out.extend(self.grid.problems().into_iter().map(|p| format!("grid: {p}")));
        if self.ppd.n_new == Some(0) {
            out.push("ppd.n_new must be at least 1".into());
        }
        match self.ppd.bandwidth {
            BandwidthPolicy::Fixed { kappa } if !(kappa.is_finite() && kappa >= 0.0) => {
                out.push(format!("ppd.bandwidth kappa = {kappa} must be nonnegative"))
            }
            BandwidthPolicy::CrossValidated { cap } if cap < 10 => {
                out.push(format!("ppd.bandwidth cap = {cap} must be at least 10"))
            }
            _ => {}
        }
        if let Some(k) = self.kde.kappa {
            if !(k.is_finite() && k >= 0.0) {
                out.push(format!("kde.kappa = {k} must be nonnegative"));
            }
        }
        if self.kde.loo_cap < 10 {
            out.push(format!("kde.loo_cap = {} must be at least 10", self.kde.loo_cap));
        }
        out
    }

    pub fn groups(&self) -> Result<(SymmetryGroup, SymmetryGroup), CliError> {
        let qc = load_group(&self.crystal).map_err(|e| CliError::Config(vec![e]))?;
        let qs = load_group(&self.specimen).map_err(|e| CliError::Config(vec![e]))?;
        Ok((qc, qs))
    }

    pub fn load_table(&self) -> Result<NormalizerTable, CliError> {
        Ok(match &self.table {
            Some(p) => NormalizerTable::load(p)?,
            None => NormalizerTable::build(self.table_lambda_max, self.table_nodes)?,
        })
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .ok_or_else(|| CliError::Config(vec!["output directory is required".into()]))?;
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// The sampler section with the run seed applied.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed.unwrap_or_default(),
            ..self.sampler.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problems_are_exhaustive() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"crystal": "nope", "hyperparams": {"mu": -1, "beta": 1, "nu": 1, "m_max": 0},
                "sampler": {"thin": 0}, "grid": {"resolution": 7}}"#,
        )
        .unwrap();
        let p = cfg.problems(Needs {
            data: true,
            seed: true,
            out: true,
            table: true,
        });
        assert!(p.len() >= 7, "{p:#?}");
        assert!(p.iter().any(|s| s.contains("seed")));
        assert!(p.iter().any(|s| s.contains("crystal")));
        assert!(p.iter().any(|s| s.contains("thin")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sampler": {"seed": 1}}"#).is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "ladder": [1.0, 0.5]}"#).unwrap();
        assert_eq!(cfg.sampler_config().seed, 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"ladder": [0.5]}"#).is_err());
    }
}
