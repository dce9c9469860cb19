//! Sampled trajectories and their CSV form.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// Values of a process at increasing times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub points: Vec<(f64, f64)>,
}

impl Path {
    pub fn push(&mut self, t: f64, value: f64) {
        self.points.push((t, value));
    }

    /// Value at the last recorded time `<= t`.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.points.iter().take_while(|(s, _)| *s <= t).last().map(|&(_, v)| v)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|&(_, v)| v)
    }
}

/// Checks that a recording grid is finite, nonnegative and increasing.
pub fn validate_grid(grid: &[f64]) -> Result<(), String> {
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err("grid times must be finite and nonnegative".into());
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err("grid times must be strictly increasing".into());
    }
    Ok(())
}

/// `n` equally spaced times from 0 to `t_end` inclusive.
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![t_end];
    }
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

/// Writes paths as `replica,t,value` rows, replica ids starting at `first_replica`.
pub fn write_csv<W: Write>(mut w: W, paths: &[Path], first_replica: u64) -> io::Result<()> {
    writeln!(w, "replica,t,value")?;
    for (i, path) in paths.iter().enumerate() {
        for &(t, v) in &path.points {
            writeln!(w, "{},{},{}", first_replica + i as u64, t, v)?;
        }
    }
    Ok(())
}
