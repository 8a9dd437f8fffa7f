//! Combined JSON configuration: `{"teacher": {...}, "planner": {...}}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::planner::PlannerConfig;
use crate::teacher::TeacherParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub teacher: TeacherParams,
    #[serde(default)]
    pub planner: PlannerConfig,
}

impl Config {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.planner.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_default_independently() {
        let cfg = Config::from_json(r#"{"planner": {"horizon_ticks": 3}}"#).unwrap();
        assert_eq!(cfg.planner.horizon_ticks, 3);
        assert_eq!(cfg.teacher, TeacherParams::default());
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(Config::from_json(r#"{"teacher": {"mistake_rate": 2.0}}"#).is_err());
        assert!(Config::from_json(r#"{"planner": {"gamma": -1}}"#).is_err());
        assert!(Config::from_json(r#"{"plannr": {}}"#).is_err());
    }
}
