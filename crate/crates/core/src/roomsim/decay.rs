use super::Rir;
use crate::{Error, Result};

const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -25.0;

/// Schroeder backward-integrated energy decay curve, normalized to 0 dB at
/// the first tap. Samples past the last nonzero tap are `-inf`.
pub fn schroeder_curve_db(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc = vec![0.0; taps.len()];
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time: least-squares line through the decay curve between
/// -5 dB and -25 dB, extrapolated to -60 dB.
pub fn t60(rir: &Rir) -> Result<f64> {
    if rir.taps.iter().all(|&t| t == 0.0) {
        return Err(Error::Argument("all-zero impulse response".into()));
    }
    let curve = schroeder_curve_db(&rir.taps);
    let start = curve.iter().position(|&d| d <= FIT_START_DB);
    let end = curve.iter().position(|&d| d <= FIT_END_DB);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if curve[e].is_finite() => (s, e),
        _ => {
            return Err(Error::InsufficientDecay {
                needed_db: FIT_END_DB,
            })
        }
    };
    let fs = rir.sample_rate as f64;
    let points: Vec<(f64, f64)> = (start..=end)
        .filter(|&i| curve[i].is_finite())
        .map(|i| (i as f64 / fs, curve[i]))
        .collect();
    if points.len() < 2 {
        return Err(Error::InsufficientDecay {
            needed_db: FIT_END_DB,
        });
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_d = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_d)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay {
            needed_db: FIT_END_DB,
        });
    }
    Ok(-60.0 / slope)
}
