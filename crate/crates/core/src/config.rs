//! The single JSON document that drives the pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{
    DownstreamConfig, HyperparameterSpace, SupervisedConfig, TrainingMode, UnsupervisedConfig,
    Variant,
};
use crate::features::FeatureSpec;
use crate::sage::{AdamConfig, SageConfig};
use crate::segmentation::SegmentationConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Number of trials; 0 disables the search stage of `pipeline`.
    pub budget: usize,
    /// Supervised epochs per trial, if different from the main runs.
    pub epochs: Option<usize>,
    pub variant: Variant,
    pub seed: u64,
    pub space: HyperparameterSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 0,
            epochs: None,
            variant: Variant::SrnVis,
            seed: 0,
            space: HyperparameterSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Existing road graph; when absent a synthetic city is generated.
    pub graph: Option<PathBuf>,
    /// Ground-truth labels (edge id to class); required with `graph`.
    pub labels: Option<PathBuf>,
    pub raster_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub segmentation: SegmentationConfig,
    pub features: FeatureSpec,
    pub sage: SageConfig,
    pub adam: AdamConfig,
    pub supervised: SupervisedConfig,
    pub unsupervised: UnsupervisedConfig,
    pub downstream: DownstreamConfig,
    pub modes: Vec<TrainingMode>,
    pub variants: Vec<Variant>,
    /// One replicate per seed; each seed drives the split and model init.
    pub seeds: Vec<u64>,
    pub search: SearchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            graph: None,
            labels: None,
            raster_manifest: None,
            output_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            segmentation: SegmentationConfig::default(),
            features: FeatureSpec::default(),
            sage: SageConfig::default(),
            adam: AdamConfig::default(),
            supervised: SupervisedConfig::default(),
            unsupervised: UnsupervisedConfig::default(),
            downstream: DownstreamConfig::default(),
            modes: vec![TrainingMode::Supervised, TrainingMode::Unsupervised],
            variants: Variant::ALL.to_vec(),
            seeds: vec![0],
            search: SearchConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The desk-scale benchmark: library defaults with five replicates.
    pub fn benchmark() -> Self {
        PipelineConfig {
            seeds: (0..5).collect(),
            ..PipelineConfig::default()
        }
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.graph, &mut self.labels, &mut self.raster_manifest]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// `--seed S` semantics: the synthetic city and the first replicate use
    /// `S`, further replicates `S + 1, S + 2, ...`.
    pub fn override_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        self.search.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        match (&self.graph, &self.labels) {
            (Some(_), None) => return cfg("`labels` is required when `graph` is given".into()),
            (None, Some(_)) => return cfg("`labels` given without `graph`".into()),
            _ => {}
        }
        for p in [&self.graph, &self.labels, &self.raster_manifest]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return cfg(format!("{} does not exist", p.display()));
            }
        }
        if self.graph.is_some()
            && self.raster_manifest.is_none()
            && self.variants.contains(&Variant::SrnVis)
        {
            return cfg("variant srn+vis needs `raster_manifest`".into());
        }
        if self.graph.is_none() {
            self.synth.validate()?;
        }
        if self.seeds.is_empty() || self.modes.is_empty() || self.variants.is_empty() {
            return cfg("seeds, modes and variants must be non-empty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return cfg("seeds must be distinct".into());
        }
        self.segmentation.validate()?;
        self.features.validate()?;
        self.sage.validate()?;
        self.adam.validate()?;
        self.supervised.validate()?;
        self.unsupervised.validate()?;
        if self.search.budget > 0 {
            self.search.space.validate()?;
            if self.search.epochs == Some(0) {
                return cfg("search.epochs must be positive".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::benchmark().validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.seeds = vec![9];
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seed_override() {
        let mut c = PipelineConfig::benchmark();
        c.override_seed(10);
        assert_eq!(c.seeds, vec![10, 11, 12, 13, 14]);
        assert_eq!(c.synth.seed, 10);
    }

    #[test]
    fn relative_paths_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"graph": "g.jsonl", "labels": "l.json", "seeds": [1, 2]}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(
            c.graph.as_deref(),
            Some(dir.path().join("g.jsonl").as_path())
        );
        assert_eq!(c.output_dir, dir.path().join("out"));
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_field_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"sedes": [1]}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let c = PipelineConfig {
            seeds: vec![1, 1],
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
