//! Ground-truth heatmap, length and offset targets.

use std::io::Write as _;
use std::path::Path;

use crate::config::PipelineConfig;
use crate::dataset::AlignedWord;
use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

/// Training targets for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensors<F> {
    /// `T x channels` heatmap; exactly 1 at every encoded word center.
    pub heat: Matrix<F>,
    pub length: Vec<F>,
    pub offset: Vec<F>,
    /// Positions where the length and offset losses apply.
    pub mask: Vec<bool>,
    /// Keyword count used to normalize the losses.
    pub num_keywords: usize,
}

/// Number of keyword (non-unknown) words.
pub fn count_keywords(words: &[AlignedWord], num_classes: usize) -> usize {
    words.iter().filter(|w| w.cls < num_classes).count()
}

/// Encodes aligned words into `(Y, L, O)` targets.
///
/// Each word contributes a Gaussian with `sigma = len * gamma` (frames),
/// truncated at `ceil(3 sigma)`, to its class column; overlapping
/// contributions combine by pointwise maximum. With the unknown class
/// disabled, unknown words are not encoded at all.
pub fn encode_targets<F: Scalar>(words: &[AlignedWord], cfg: &PipelineConfig) -> Result<TargetTensors<F>> {
    let t_len = cfg.temporal_resolution;
    let channels = cfg.heatmap_channels();
    let unknown = cfg.unknown_class();
    let mut heat = Matrix::zeros(t_len, channels);
    let mut length = vec![F::zero(); t_len];
    let mut offset = vec![F::zero(); t_len];
    let mut mask = vec![false; t_len];
    let mut occupied = vec![false; t_len];

    for w in words {
        w.check(t_len)?;
        if w.cls > unknown {
            return Err(Error::InvalidInput(format!(
                "word {:?}: class {} exceeds unknown class {unknown}",
                w.text, w.cls
            )));
        }
        if w.cls == unknown && !cfg.use_unknown_class {
            continue;
        }
        let loc = w.loc();
        if occupied[loc] {
            return Err(Error::InvalidInput(format!(
                "two words centered at frame {loc}; temporal resolution too coarse"
            )));
        }
        occupied[loc] = true;

        let sigma = w.len * cfg.gamma;
        let radius = (3.0 * sigma).ceil() as usize;
        let lo = loc.saturating_sub(radius);
        let hi = (loc + radius).min(t_len - 1);
        for t in lo..=hi {
            let d = t as f64 - loc as f64;
            let v = if t == loc {
                F::one()
            } else {
                F::lit((-d * d / (2.0 * sigma * sigma)).exp())
            };
            if v > heat.get(t, w.cls) {
                heat.set(t, w.cls, v);
            }
        }
        if w.cls < unknown || cfg.regress_unknown {
            length[loc] = F::lit(w.len);
            offset[loc] = F::lit(w.ofs());
            mask[loc] = true;
        }
    }
    Ok(TargetTensors {
        heat,
        length,
        offset,
        mask,
        num_keywords: count_keywords(words, cfg.num_keywords),
    })
}

impl<F: Scalar> TargetTensors<F> {
    /// Debug dump: one row per frame with every heat channel, then L, O and
    /// the mask flag.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("t");
        for c in 0..self.heat.cols() {
            s.push_str(&format!(",y{c}"));
        }
        s.push_str(",length,offset,mask\n");
        for t in 0..self.heat.rows() {
            s.push_str(&t.to_string());
            for c in 0..self.heat.cols() {
                s.push_str(&format!(",{}", self.heat.get(t, c)));
            }
            s.push_str(&format!(
                ",{},{},{}\n",
                self.length[t], self.offset[t], self.mask[t] as u8
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
