use ndarray::Array2;

use crate::automata::ProductMdp;
use crate::error::{AtigError, Result};
use crate::grid_env::{Action, GridMap, ObjectKind};

/// Input encoding for feature-based rewards: a one-hot object map of the
/// `window x window` neighborhood (all zeros for off-grid cells), a one-hot
/// automaton state padded to `dfa_slots`, and a one-hot action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureEncoding {
    pub window: usize,
    pub dfa_slots: usize,
}

impl Default for FeatureEncoding {
    fn default() -> Self {
        FeatureEncoding {
            window: 7,
            dfa_slots: 10,
        }
    }
}

impl FeatureEncoding {
    pub fn new(window: usize, dfa_slots: usize) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(AtigError::input(format!("window must be odd, got {window}")));
        }
        Ok(FeatureEncoding { window, dfa_slots })
    }

    pub fn len(&self) -> usize {
        self.window * self.window * ObjectKind::ALL.len() + self.dfa_slots + Action::COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes the encoding of `(cell s, automaton state q, action a)` into `out`.
    pub fn encode_into(&self, grid: &GridMap, s: usize, q: usize, a: usize, out: &mut [f64]) -> Result<()> {
        if q >= self.dfa_slots {
            return Err(AtigError::input(format!(
                "automaton state {q} does not fit in {} one-hot slots",
                self.dfa_slots
            )));
        }
        if a >= Action::COUNT {
            return Err(AtigError::input(format!("action index {a} out of range")));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let kinds = ObjectKind::ALL.len();
        let c = grid.cell_of(s);
        let r = (self.window / 2) as isize;
        let mut slot = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                if let Some(k) = grid.object_at(c.x as isize + dx, c.y as isize + dy) {
                    out[slot * kinds + k.index()] = 1.0;
                }
                slot += 1;
            }
        }
        let base = self.window * self.window * kinds;
        out[base + q] = 1.0;
        out[base + self.dfa_slots + a] = 1.0;
        Ok(())
    }

    pub fn encode(&self, grid: &GridMap, s: usize, q: usize, a: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        self.encode_into(grid, s, q, a, &mut v)?;
        Ok(v)
    }

    /// One row per product state-action pair.
    pub fn encode_product(&self, grid: &GridMap, product: &ProductMdp) -> Result<Array2<f64>> {
        if product.grid_cells() != grid.num_cells() {
            return Err(AtigError::input("product was built on a different grid"));
        }
        let na = product.num_actions();
        let mut m = Array2::zeros((product.num_pairs(), self.len()));
        for z in 0..product.num_states() {
            let (s, q) = product.state(z);
            for a in 0..na {
                let mut row = m.row_mut(z * na + a);
                let slice = row
                    .as_slice_mut()
                    .expect("rows of a standard-layout array are contiguous");
                self.encode_into(grid, s, q, a, slice)?;
            }
        }
        Ok(m)
    }
}
