use std::fs;
use std::path::Path;

use anyhow::Context;
use invquad::{Criterion, Design, DesignSpace, ModelSpec};
use serde::{Deserialize, Serialize};

/// On-disk design: model, space, support and weights, plus the criterion it
/// was computed for when known.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub model: ModelSpec,
    pub space: DesignSpace,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
}

impl DesignFile {
    pub fn new(model: ModelSpec, space: DesignSpace, design: &Design, criterion: Option<Criterion>) -> Self {
        DesignFile {
            model,
            space,
            points: design.points().to_vec(),
            weights: design.weights().to_vec(),
            criterion,
        }
    }

    pub fn design(&self) -> invquad::Result<Design> {
        let d = Design::with_tolerance(self.points.clone(), self.weights.clone(), 1e-9)?;
        d.check_in(&self.space)?;
        Ok(d)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: DesignFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        file.design()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
