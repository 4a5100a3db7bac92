use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::{LabeledDataset, Trace, TraceGrid};

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Scale a raw current trace (pA) so the median maps to `-1` and
/// `median + peak_height` maps to `+1`.
///
/// When more than half of the window sits on the high level the median lands
/// there and the whole trace comes out shifted down by about 2.
pub fn rescale_trace(raw: &[f64], peak_height: f64, grid: TraceGrid) -> Result<Trace<f64>> {
    if !(peak_height.is_finite() && peak_height > 0.0) {
        return Err(Error::invalid("peak_height", format!("must be > 0, got {peak_height}")));
    }
    let low = median(raw).ok_or(Error::Empty("raw trace"))?;
    let scale = 2.0 / peak_height;
    Trace::new(raw.iter().map(|v| scale * (v - low) - 1.0).collect(), grid)
}

/// Replay the median preprocessing on a synthetic set: each trace is mapped
/// to a current with the given peak height, then rescaled by its median.
pub fn median_rescaled(ds: &LabeledDataset, peak_height: f64) -> Result<LabeledDataset> {
    let grid = ds.grid();
    let traces: Vec<Vec<f32>> = ds
        .traces()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let raw: Vec<f64> = x.iter().map(|&v| 0.5 * (f64::from(v) + 1.0) * peak_height).collect();
            Ok(rescale_trace(&raw, peak_height, grid)?.samples().iter().map(|&v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    let mut meta = ds.meta.clone();
    meta.note = Some(format!("median rescaled, peak {peak_height}"));
    LabeledDataset::new(grid, traces.concat(), ds.labels().to_vec(), ds.provenance(), meta)
}
