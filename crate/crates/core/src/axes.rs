use std::fmt;

use serde::{Deserialize, Serialize};

/// The four rated quality axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Production Quality
    Pq,
    /// Production Complexity
    Pc,
    /// Content Enjoyment
    Ce,
    /// Content Usefulness
    Cu,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Pq, Axis::Pc, Axis::Ce, Axis::Cu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Pq => "pq",
            Axis::Pc => "pc",
            Axis::Ce => "ce",
            Axis::Cu => "cu",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One score per axis, used for both labels and predictions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisScores {
    pub pq: f64,
    pub pc: f64,
    pub ce: f64,
    pub cu: f64,
}

impl AxisScores {
    pub const fn new(pq: f64, pc: f64, ce: f64, cu: f64) -> Self {
        Self { pq, pc, ce, cu }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v, v)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.pq, self.pc, self.ce, self.cu]
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pq => self.pq,
            Axis::Pc => self.pc,
            Axis::Ce => self.ce,
            Axis::Cu => self.cu,
        }
    }

    pub fn set(&mut self, axis: Axis, v: f64) {
        match axis {
            Axis::Pq => self.pq = v,
            Axis::Pc => self.pc = v,
            Axis::Ce => self.ce = v,
            Axis::Cu => self.cu = v,
        }
    }

    /// Arithmetic mean of the four axes.
    pub fn composite(&self) -> f64 {
        (self.pq + self.pc + self.ce + self.cu) / 4.0
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Arithmetic mean of the four axis values.
pub fn composite_score(axes: &AxisScores) -> f64 {
    axes.composite()
}

/// Extracts one axis as a column.
pub fn column(rows: &[AxisScores], axis: Axis) -> Vec<f64> {
    rows.iter().map(|r| r.get(axis)).collect()
}
