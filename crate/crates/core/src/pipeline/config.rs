use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::masking::LabelTable;
use crate::registration::RegistrationConfig;

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "NEUROPIPE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedInputs {
    #[default]
    SingleT1,
    AllFour,
}

/// An external program invoked through a command template.
///
/// Placeholders: `{input}` (one image), `{inputs_4mod}` (T1, T1ce, T2,
/// FLAIR as four arguments), `{output}` (path the tool must create).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalToolSpec {
    #[serde(default = "default_tool_name")]
    pub name: String,
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub expects: ExpectedInputs,
}

fn default_tool_name() -> String {
    "tool".into()
}

fn default_timeout() -> f64 {
    3600.0
}

impl ExternalToolSpec {
    pub fn new(name: &str, command: &str, timeout_s: f64, expects: ExpectedInputs) -> Self {
        Self { name: name.into(), command: command.into(), timeout_s, expects }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.command.contains("{output}") {
            return Err(Error::Config(format!("tool `{}`: command must contain {{output}}", self.name)));
        }
        if !self.command.contains("{input}") && !self.command.contains("{inputs_4mod}") {
            return Err(Error::Config(format!(
                "tool `{}`: command must contain {{input}} or {{inputs_4mod}}",
                self.name
            )));
        }
        if !(self.timeout_s > 0.0) || !self.timeout_s.is_finite() {
            return Err(Error::Config(format!("tool `{}`: timeout_s must be positive", self.name)));
        }
        Ok(())
    }
}

/// How brain extraction is performed after registration and resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BeMode {
    /// Keep the full head.
    #[default]
    None,
    /// Mask recovered from the subject's already skull-stripped reference.
    Manual,
    /// External brain-extraction program.
    Tool(ExternalToolSpec),
}

impl BeMode {
    pub fn method_name(&self) -> String {
        match self {
            BeMode::None => "none".into(),
            BeMode::Manual => "manual".into(),
            BeMode::Tool(t) => t.name.clone(),
        }
    }
}

/// One subject's raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    pub id: String,
    pub t1: PathBuf,
    #[serde(default)]
    pub t1ce: Option<PathBuf>,
    #[serde(default)]
    pub t2: Option<PathBuf>,
    #[serde(default)]
    pub flair: Option<PathBuf>,
    /// Already preprocessed image of the same subject in atlas space.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];

impl SubjectSpec {
    /// Present modalities in canonical order.
    pub fn modalities(&self) -> Vec<(&'static str, &Path)> {
        let all = [
            ("t1", Some(self.t1.as_path())),
            ("t1ce", self.t1ce.as_deref()),
            ("t2", self.t2.as_deref()),
            ("flair", self.flair.as_deref()),
        ];
        all.into_iter().filter_map(|(n, p)| p.map(|p| (n, p))).collect()
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.t1);
        for p in [&mut self.t1ce, &mut self.t2, &mut self.flair, &mut self.reference, &mut self.ground_truth]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub atlas: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub be: BeMode,
    /// Skull-strips the atlas-aligned T1 before it is registered to the
    /// reference. Without it the reference's own nonzero region is used.
    #[serde(default)]
    pub guard: Option<ExternalToolSpec>,
    pub segmentation: ExternalToolSpec,
    #[serde(default)]
    pub registration: RegistrationConfig,
    /// Output lattice; the atlas grid when absent.
    #[serde(default)]
    pub target_grid: Option<GridSpec>,
    #[serde(default)]
    pub labels: LabelTable,
    /// Modality whose registration drives all modalities of a subject.
    #[serde(default = "default_driver")]
    pub driver_modality: String,
    #[serde(default)]
    pub subjects: Vec<SubjectSpec>,
}

fn default_workers() -> usize {
    1
}

fn default_driver() -> String {
    "t1".into()
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    fn resolve(&mut self, base: &Path) {
        if self.atlas.is_relative() {
            self.atlas = base.join(&self.atlas);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        for s in &mut self.subjects {
            s.resolve(base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.segmentation.validate()?;
        if let BeMode::Tool(t) = &self.be {
            t.validate()?;
        }
        if let Some(g) = &self.guard {
            g.validate()?;
        }
        if let Some(g) = &self.target_grid {
            g.validate()?;
        }
        if !MODALITIES.contains(&self.driver_modality.as_str()) {
            return Err(Error::Config(format!("unknown driver modality `{}`", self.driver_modality)));
        }
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("subject ids must be unique".into()));
        }
        if ids.iter().any(|id| id.is_empty() || id.contains(['/', '\\']) || *id == "." || *id == "..") {
            return Err(Error::Config("subject ids must be plain directory names".into()));
        }
        Ok(())
    }

    /// Worker count, honouring [`WORKERS_ENV`].
    pub fn effective_workers(&self) -> usize {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(self.workers)
            .max(1)
    }
}
