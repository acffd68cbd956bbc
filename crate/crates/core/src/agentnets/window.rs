use crate::error::{Error, Result};
use crate::types::{AgentState, FeatureSchema};

/// Observation windows for a batch of samples, stored time-major per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowBatch {
    /// Steps per window.
    pub len: usize,
    /// Feature width `k`.
    pub k: usize,
    /// `locs[i * len + t]`.
    pub locs: Vec<usize>,
    /// `feats[(i * len + t) * k ..][..k]`.
    pub feats: Vec<f64>,
}

impl WindowBatch {
    pub fn new(len: usize, k: usize) -> Self {
        Self {
            len,
            k,
            locs: Vec::new(),
            feats: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.locs.len().checked_div(self.len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    /// Appends one window, keeping its last `len` states and left-padding
    /// shorter windows with their first state.
    pub fn push(&mut self, schema: &FeatureSchema, window: &[AgentState]) -> Result<()> {
        let first = window.first().ok_or(Error::Empty("observation window"))?;
        let skip = window.len().saturating_sub(self.len);
        let pad = self.len.saturating_sub(window.len());
        let mut locs = Vec::with_capacity(self.len);
        let mut feats = Vec::with_capacity(self.len * self.k);
        for s in std::iter::repeat_n(first, pad).chain(&window[skip..]) {
            if s.loc_id >= schema.n_locations {
                return Err(Error::UnknownLocation(s.loc_id));
            }
            let f = schema.encode(s);
            if f.len() != self.k {
                return Err(Error::OutOfRange {
                    what: "feature width",
                    detail: format!("schema gives {}, network expects {}", f.len(), self.k),
                });
            }
            locs.push(s.loc_id);
            feats.extend(f);
        }
        self.locs.extend(locs);
        self.feats.extend(feats);
        Ok(())
    }

    /// Appends pre-encoded windows from another batch.
    pub fn extend_from(&mut self, other: &WindowBatch) {
        debug_assert_eq!((self.len, self.k), (other.len, other.k));
        self.locs.extend_from_slice(&other.locs);
        self.feats.extend_from_slice(&other.feats);
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.len, self.k);
        for &i in idx {
            out.locs.extend_from_slice(&self.locs[i * self.len..(i + 1) * self.len]);
            out.feats
                .extend_from_slice(&self.feats[i * self.len * self.k..(i + 1) * self.len * self.k]);
        }
        out
    }

    /// Location ids at step `t` for every sample.
    pub(crate) fn locs_at(&self, t: usize) -> Vec<usize> {
        (0..self.n()).map(|i| self.locs[i * self.len + t]).collect()
    }

    /// `[n, k]` features at step `t`.
    pub(crate) fn feats_at(&self, t: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * self.k);
        for i in 0..self.n() {
            let start = (i * self.len + t) * self.k;
            out.extend_from_slice(&self.feats[start..start + self.k]);
        }
        out
    }
}
