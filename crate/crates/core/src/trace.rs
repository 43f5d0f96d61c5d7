//! Optional recording of dense matrix shapes along a computation, used to
//! check structural cost claims without timing.

use std::sync::Mutex;

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeRecord {
    pub label: &'static str,
    pub rows: usize,
    pub cols: usize,
}

/// Thread-safe log of matrix shapes.
#[derive(Debug, Default)]
pub struct ShapeTrace {
    records: Mutex<Vec<ShapeRecord>>,
}

impl ShapeTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, label: &'static str, rows: usize, cols: usize) {
        self.records
            .lock()
            .expect("shape trace poisoned")
            .push(ShapeRecord { label, rows, cols });
    }

    pub fn records(&self) -> Vec<ShapeRecord> {
        self.records.lock().expect("shape trace poisoned").clone()
    }

    /// Records whose smaller side exceeds `limit` and whose label is not
    /// in `allowed`.
    pub fn oversized(&self, limit: usize, allowed: &[&str]) -> Vec<ShapeRecord> {
        self.records()
            .into_iter()
            .filter(|r| r.rows.min(r.cols) > limit && !allowed.contains(&r.label))
            .collect()
    }
}

pub(crate) fn note(trace: Option<&ShapeTrace>, label: &'static str, m: &DMatrix<f64>) {
    if let Some(t) = trace {
        t.record(label, m.nrows(), m.ncols());
    }
}

pub(crate) fn note_shape(trace: Option<&ShapeTrace>, label: &'static str, rows: usize, cols: usize) {
    if let Some(t) = trace {
        t.record(label, rows, cols);
    }
}
