//! Plain-text run report bundling settings, seeds, pinned conventions and
//! all loss/metric history in one file.
//!
//! Layout: `#` comment lines, then sections introduced by `[name]` lines.
//! `[settings]` holds TOML; every other section holds CSV with a header row.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Conventions fixed by the implementation rather than by configuration.
pub const PINNED: &[(&str, &str)] = &[
    ("loss_reduction", "mean over batch and pixels"),
    ("alpha_default", "1"),
    ("optimizer", "adam beta1=0.9 beta2=0.999 eps=1e-8, constant learning rate"),
    ("activation", "relu in conv blocks, sigmoid in attention gates, no normalization"),
    ("padding", "reflect, same size"),
    ("init", "he-normal weights, zero biases, seeded chacha8"),
    ("warp", "backward bilinear, clamped border; +-2 flows composed from adjacent pairs"),
    ("filter_init", "first frame of the temporally ordered stack"),
    ("hf_gradient", "local-variance maps held constant"),
    ("swt", "haar level 1, periodic boundary"),
    ("ssim", "gaussian 11 taps sigma 1.5, k1=0.01 k2=0.03, range 1, valid region"),
    ("boundary_frames", "frames without a full window are passed through and flagged"),
];

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    title: String,
    settings: String,
    sections: Vec<(String, String)>,
}

impl RunReport {
    pub fn new(title: impl Into<String>, settings: &impl Serialize) -> Result<Self> {
        let settings = toml::to_string(settings).map_err(|e| Error::Config(format!("settings do not serialize: {e}")))?;
        Ok(Self {
            title: title.into(),
            settings,
            sections: Vec::new(),
        })
    }

    /// Adds a CSV section (header row included).
    pub fn section(&mut self, name: impl Into<String>, csv: impl Into<String>) -> &mut Self {
        self.sections.push((name.into(), csv.into()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("# fluoroden run report: {}\n[settings]\n{}", self.title, self.settings);
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("[pinned]\nkey,value\n");
        for (k, v) in PINNED {
            writeln!(out, "{k},{v}").unwrap();
        }
        for (name, csv) in &self.sections {
            writeln!(out, "[{name}]").unwrap();
            out.push_str(csv);
            if !csv.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::OptimizerConfig;

    #[test]
    fn renders_sections_in_order() {
        let mut r = RunReport::new("demo", &OptimizerConfig::default()).unwrap();
        r.section("history", "epoch,loss\n0,1.5");
        let text = r.render();
        assert!(text.starts_with("# fluoroden run report: demo\n[settings]\nlearning_rate = 0.0001\n"));
        let pinned = text.find("[pinned]").unwrap();
        let hist = text.find("[history]\nepoch,loss\n0,1.5\n").unwrap();
        assert!(pinned < hist);
        assert!(text.ends_with('\n'));
    }
}
