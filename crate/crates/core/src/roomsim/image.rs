use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{dist, Rir, RirMeta, RoomSpec};
use crate::{Error, Result};

/// How a fractional image delay is written into the tap vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Round to the nearest sample.
    #[default]
    Nearest,
    /// Hann-windowed sinc spread over +-8 samples.
    Sinc,
}

const SINC_HALF_WIDTH: i64 = 8;
const MAX_ORDER_CAP: usize = 40;
const RESIDUAL_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirOptions {
    pub duration_s: f64,
    /// `None` selects [`default_max_order`].
    pub max_order: Option<usize>,
    pub placement: Placement,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            duration_s: 1.0,
            max_order: None,
            placement: Placement::Nearest,
        }
    }
}

/// Smallest order `N` such that every image beyond it is attenuated below
/// `1e-4` of the direct path, capped at 40.
///
/// Images are never closer than the direct path, so the bound only needs
/// the smallest reflection exponent left out, see [`residual_exponent`].
pub fn default_max_order(reflection: f64) -> usize {
    if reflection <= 0.0 {
        return 0;
    }
    (0..MAX_ORDER_CAP)
        .find(|&n| reflection.powi(residual_exponent(n)) < RESIDUAL_RATIO)
        .unwrap_or(MAX_ORDER_CAP)
}

/// Smallest reflection count of any image with index sum `order + 1`:
/// each nonzero axis index `m` contributes at least `2|m| - 1`.
pub(crate) fn residual_exponent(order: usize) -> i32 {
    let next = order as i32 + 1;
    2 * next - next.min(3)
}

pub fn image_method(spec: &RoomSpec, duration_s: f64, max_order: usize) -> Result<Rir> {
    image_method_with(
        spec,
        &RirOptions {
            duration_s,
            max_order: Some(max_order),
            placement: Placement::Nearest,
        },
    )
}

pub fn image_method_with(spec: &RoomSpec, options: &RirOptions) -> Result<Rir> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let c = spec.speed_of_sound;
    let direct_delay = spec.distance() / c;
    if !(options.duration_s > direct_delay) {
        return Err(Error::Argument(format!(
            "duration {} s does not contain the direct path at {direct_delay:.4} s",
            options.duration_s
        )));
    }
    let max_order = options
        .max_order
        .unwrap_or_else(|| default_max_order(spec.reflection));
    let len = (options.duration_s * fs).ceil() as usize;
    let mut taps = vec![0.0; len];
    let beta = spec.reflection;
    let n = max_order as i64;
    let [lx, ly, lz] = spec.dims;
    let [sx, sy, sz] = spec.source;

    for mx in -n..=n {
        let ry = n - mx.abs();
        for my in -ry..=ry {
            let rz = ry - my.abs();
            for mz in -rz..=rz {
                for parity in 0..8u8 {
                    let (q, j, k) = (
                        (parity & 1) as i64,
                        ((parity >> 1) & 1) as i64,
                        ((parity >> 2) & 1) as i64,
                    );
                    let exponent = (mx - q).abs()
                        + mx.abs()
                        + (my - j).abs()
                        + my.abs()
                        + (mz - k).abs()
                        + mz.abs();
                    let gain = beta.powi(exponent as i32);
                    if gain == 0.0 {
                        continue;
                    }
                    let image = [
                        (1 - 2 * q) as f64 * sx + 2.0 * mx as f64 * lx,
                        (1 - 2 * j) as f64 * sy + 2.0 * my as f64 * ly,
                        (1 - 2 * k) as f64 * sz + 2.0 * mz as f64 * lz,
                    ];
                    let d = dist(image, spec.mic);
                    let delay = d / c;
                    if delay >= options.duration_s {
                        continue;
                    }
                    let amplitude = gain / (4.0 * PI * d);
                    place(&mut taps, delay * fs, amplitude, options.placement);
                }
            }
        }
    }
    if taps.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric { op: "image_method" });
    }
    Ok(Rir {
        taps,
        sample_rate: spec.sample_rate,
        meta: Some(RirMeta {
            spec: spec.clone(),
            max_order,
            duration_s: options.duration_s,
            placement: options.placement,
        }),
    })
}

fn place(taps: &mut [f64], delay_samples: f64, amplitude: f64, placement: Placement) {
    match placement {
        Placement::Nearest => {
            let idx = delay_samples.round() as usize;
            if idx < taps.len() {
                taps[idx] += amplitude;
            }
        }
        Placement::Sinc => {
            let center = delay_samples.round() as i64;
            for i in center - SINC_HALF_WIDTH..=center + SINC_HALF_WIDTH {
                if i < 0 || i as usize >= taps.len() {
                    continue;
                }
                let x = i as f64 - delay_samples;
                if x.abs() > SINC_HALF_WIDTH as f64 {
                    continue;
                }
                let window = 0.5 * (1.0 + (PI * x / SINC_HALF_WIDTH as f64).cos());
                let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                taps[i as usize] += amplitude * sinc * window;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_room(beta: f64) -> RoomSpec {
        RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], beta)
    }

    #[test]
    fn direct_path_closed_form() {
        let rir = image_method(&example_room(0.0), 1.0, 0).unwrap();
        let d = 14f64.sqrt();
        assert_eq!(rir.nonzero_taps(), 1);
        assert_eq!(rir.taps.len(), 16000);
        assert_eq!(rir.direct_index(), 175);
        assert!((rir.taps[175] - 1.0 / (4.0 * PI * d)).abs() < 1e-15);
    }

    #[test]
    fn order_zero_has_eight_images() {
        // Distinct delays in this geometry, so eight separate taps.
        let rir = image_method(&example_room(0.5), 1.0, 0).unwrap();
        assert_eq!(rir.nonzero_taps(), 8);
    }

    #[test]
    fn zero_reflection_ignores_order() {
        let a = image_method(&example_room(0.0), 1.0, 0).unwrap();
        let b = image_method(&example_room(0.0), 1.0, 6).unwrap();
        assert_eq!(a.taps, b.taps);
    }

    #[test]
    fn coincident_source_and_mic() {
        let s = RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], 0.5);
        assert!(matches!(image_method(&s, 1.0, 1), Err(Error::Singularity(_))));
    }

    #[test]
    fn too_short_duration() {
        assert!(matches!(
            image_method(&example_room(0.5), 0.005, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn default_order_bounds_residual() {
        assert_eq!(default_max_order(0.0), 0);
        assert_eq!(residual_exponent(0), 1);
        assert_eq!(residual_exponent(1), 2);
        assert_eq!(residual_exponent(5), 9);
        for beta in [0.2, 0.5, 0.8] {
            let n = default_max_order(beta);
            assert!(beta.powi(residual_exponent(n)) < 1e-4);
            assert!(beta.powi(residual_exponent(n - 1)) >= 1e-4);
        }
        assert_eq!(default_max_order(0.8), 22);
        assert_eq!(default_max_order(0.999), 40);
    }

    #[test]
    fn sinc_mode_preserves_direct_peak_location() {
        let opts = RirOptions {
            duration_s: 0.5,
            max_order: Some(0),
            placement: Placement::Sinc,
        };
        let rir = image_method_with(&example_room(0.0), &opts).unwrap();
        let peak = rir
            .taps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(peak, 175);
        assert!(rir.nonzero_taps() > 1 && rir.nonzero_taps() <= 17);
    }
}
