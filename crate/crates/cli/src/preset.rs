use invquad::{Design, DesignSpace, Error, ModelSpec, Result};

/// A named case study: model, space, extrapolation target and designs to compare.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelSpec,
    pub space: DesignSpace,
    pub extrapolation_point: f64,
    pub comparison_designs: Vec<(String, Design)>,
}

pub const NAMES: &[&str] = &["landete"];

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        // antler weight against age, fitted with the P1 parameterization
        "landete" => Ok(Preset {
            name: "landete",
            model: ModelSpec::p1(0.0002865, 0.0002117, 0.0000301)?,
            space: DesignSpace::new(1.0, 14.0)?,
            extrapolation_point: 21.0,
            comparison_designs: vec![(
                "xi_u".to_string(),
                Design::uniform(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 10.0, 14.0])?,
            )],
        }),
        other => Err(Error::Validation(format!(
            "unknown preset {other:?} (available: {})",
            NAMES.join(", ")
        ))),
    }
}
