//! g-tensor datasets (TOML) and the bundled site-1 tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ShfError};
use crate::spincore::{GTensor, Orientation, SiteLabel, SpinCenter};

pub const BUNDLED: &str = include_str!("../data/gtensors_site1.toml");
pub const BUNDLED_NAME: &str = "gtensors_site1.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawCenter {
    site: SiteLabel,
    #[serde(with = "orientation_str")]
    orientation: Orientation,
    ground: GTensor,
    excited: GTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawDataset {
    frame: String,
    center: Vec<RawCenter>,
}

mod orientation_str {
    use super::Orientation;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &Orientation, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(o)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Orientation, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tensors per crystallographic site. Orientation B is derived from A by C₂
/// conjugation unless the file lists it explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct GTensorDataset {
    pub source: String,
    centers: Vec<SpinCenter>,
}

impl GTensorDataset {
    pub fn bundled() -> Self {
        parse_gtensors(BUNDLED, BUNDLED_NAME).expect("bundled g-tensors are valid")
    }

    pub fn center(&self, site: SiteLabel, orientation: Orientation) -> Result<SpinCenter> {
        if let Some(c) = self.centers.iter().find(|c| c.site == site && c.orientation == orientation) {
            return Ok(c.clone());
        }
        self.centers
            .iter()
            .find(|c| c.site == site)
            .map(|c| c.with_orientation(orientation))
            .ok_or_else(|| invalid(format!("dataset `{}` has no tensors for {site:?}", self.source)))
    }

    pub fn centers(&self) -> &[SpinCenter] {
        &self.centers
    }
}

pub fn load_gtensors(path: impl AsRef<Path>) -> Result<GTensorDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ShfError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_gtensors(&text, &path.display().to_string())
}

pub fn parse_gtensors(text: &str, source: &str) -> Result<GTensorDataset> {
    let raw: RawDataset = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| crate::error::line_of(text, s.start));
        ShfError::Parse { path: source.to_string(), line, msg: e.message().to_string() }
    })?;
    if raw.frame.split_whitespace().collect::<Vec<_>>() != ["D1", "D2", "b"] {
        return Err(ShfError::FrameMismatch(raw.frame));
    }
    if raw.center.is_empty() {
        return Err(invalid(format!("dataset `{source}` lists no centers")));
    }
    let centers = raw
        .center
        .into_iter()
        .map(|c| SpinCenter { g_ground: c.ground, g_excited: c.excited, site: c.site, orientation: c.orientation })
        .collect();
    Ok(GTensorDataset { source: source.to_string(), centers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_site1_a_is_as_transcribed() {
        let d = GTensorDataset::bundled();
        let a = d.center(SiteLabel::Site1, Orientation::A).unwrap();
        assert_eq!(a.g_ground.rows()[1][1], 8.90);
        assert_eq!(a.g_excited.rows()[2][2], 7.888);
    }

    #[test]
    fn orientation_b_is_the_c2_conjugate() {
        let d = GTensorDataset::bundled();
        let a = d.center(SiteLabel::Site1, Orientation::A).unwrap();
        let b = d.center(SiteLabel::Site1, Orientation::B).unwrap();
        assert_eq!(b.orientation, Orientation::B);
        assert_eq!(b.g_ground, a.g_ground.c2_conjugate());
        assert_eq!(b.g_excited, a.g_excited.c2_conjugate());
    }

    #[test]
    fn missing_site_is_an_error() {
        assert!(GTensorDataset::bundled().center(SiteLabel::Site2, Orientation::A).is_err());
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(parse_gtensors("frame = \"x y z\"\n[[center]]\n", "t"), Err(ShfError::Parse { .. } | ShfError::FrameMismatch(_))));
        let short = "frame = \"D1 D2 b\"\n[[center]]\nsite = \"site1\"\norientation = \"A\"\nground = [[1.0, 0.0]]\nexcited = [[1.0]]\n";
        assert!(matches!(parse_gtensors(short, "t"), Err(ShfError::Parse { .. })));
        let wrong_frame = BUNDLED.replace("frame = \"D1 D2 b\"", "frame = \"a b c\"");
        assert!(matches!(parse_gtensors(&wrong_frame, "t"), Err(ShfError::FrameMismatch(_))));
    }
}
