use super::AnalysisError;
use crate::ingest::EventRecord;

pub const WEEK_SECONDS: f64 = 7.0 * 24.0 * 3600.0;

/// Split records into fixed-width half-open windows `[t0 + i*w, t0 + (i+1)*w)`
/// where `t0` is the earliest timestamp. Empty middle windows are kept so
/// indices stay aligned with time.
pub fn partition_windows(records: &[EventRecord], width: f64) -> Result<Vec<Vec<EventRecord>>, AnalysisError> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(AnalysisError::InvalidArgument(format!("window width must be positive, got {width}")));
    }
    let Some(t0) = records.iter().map(|r| r.timestamp).min_by(f64::total_cmp) else {
        return Err(AnalysisError::InvalidArgument("no events to partition".into()));
    };
    let index = |t: f64| ((t - t0) / width).floor() as usize;
    let count = records.iter().map(|r| index(r.timestamp)).max().unwrap_or(0) + 1;
    let mut windows = vec![Vec::new(); count];
    for r in records {
        windows[index(r.timestamp)].push(r.clone());
    }
    Ok(windows)
}
