//! Rectangular-room impulse responses via the image-source method, and the
//! three room-size sets used to build simulated reverberation pools.

mod decay;
mod image;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decay::{schroeder_curve_db, t60};
pub use image::{default_max_order, image_method, image_method_with, Placement, RirOptions};
pub use io::{read_rir, write_rir, RirRecord};

use crate::util::rng_for;
use crate::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Minimum distance between a sampled source/mic and any wall, meters.
pub const WALL_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoomSet {
    S1,
    S2,
    S3,
}

impl RoomSet {
    pub const ALL: [RoomSet; 3] = [RoomSet::S1, RoomSet::S2, RoomSet::S3];

    /// Uniform ranges for (Lx, Ly, Lz) in meters.
    pub fn dim_ranges(self) -> [(f64, f64); 3] {
        match self {
            RoomSet::S1 => [(1.0, 10.0), (1.0, 10.0), (2.0, 5.0)],
            RoomSet::S2 => [(10.0, 30.0), (10.0, 30.0), (2.0, 5.0)],
            RoomSet::S3 => [(30.0, 50.0), (30.0, 50.0), (2.0, 5.0)],
        }
    }

    fn tag(self) -> u64 {
        match self {
            RoomSet::S1 => 1,
            RoomSet::S2 => 2,
            RoomSet::S3 => 3,
        }
    }
}

impl fmt::Display for RoomSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.tag())
    }
}

impl FromStr for RoomSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" | "s1" => Ok(RoomSet::S1),
            "S2" | "s2" => Ok(RoomSet::S2),
            "S3" | "s3" => Ok(RoomSet::S3),
            other => Err(Error::Argument(format!("unknown room set {other:?}"))),
        }
    }
}

/// Shoebox room with one source and one omnidirectional microphone.
/// A single reflection coefficient is shared by all six surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub reflection: f64,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    /// Seed of the RNG stream that placed source and mic.
    #[serde(default)]
    pub seed: u64,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], source: [f64; 3], mic: [f64; 3], reflection: f64) -> Self {
        Self {
            dims,
            source,
            mic,
            reflection,
            speed_of_sound: SPEED_OF_SOUND,
            sample_rate: crate::sigproc::SAMPLE_RATE,
            seed: 0,
        }
    }

    pub fn distance(&self) -> f64 {
        dist(self.source, self.mic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Argument(format!("room dims {:?}", self.dims)));
        }
        for (name, p) in [("source", self.source), ("mic", self.mic)] {
            if (0..3).any(|a| !(p[a] > 0.0 && p[a] < self.dims[a])) {
                return Err(Error::Argument(format!(
                    "{name} {p:?} outside room {:?}",
                    self.dims
                )));
            }
        }
        if !(0.0..1.0).contains(&self.reflection) {
            return Err(Error::Argument(format!(
                "reflection coefficient {} outside [0, 1)",
                self.reflection
            )));
        }
        if !(self.speed_of_sound > 0.0) || self.sample_rate == 0 {
            return Err(Error::Argument("speed of sound and sample rate must be positive".into()));
        }
        if self.source == self.mic {
            return Err(Error::Singularity(self.source));
        }
        Ok(())
    }
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Finite impulse response with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub meta: Option<RirMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirMeta {
    pub spec: RoomSpec,
    pub max_order: usize,
    pub duration_s: f64,
    pub placement: Placement,
}

impl Rir {
    /// Bare response without room metadata.
    pub fn from_taps(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric { op: "rir" });
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::Argument("impulse response has no nonzero tap".into()));
        }
        Ok(Self {
            taps,
            sample_rate,
            meta: None,
        })
    }

    /// Sample index of the direct path: from the room geometry when known,
    /// otherwise the largest-magnitude tap.
    pub fn direct_index(&self) -> usize {
        match &self.meta {
            Some(m) => (m.spec.distance() / m.spec.speed_of_sound * self.sample_rate as f64)
                .round() as usize,
            None => self
                .taps
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, &v)| {
                    if v.abs() > bv {
                        (i, v.abs())
                    } else {
                        (bi, bv)
                    }
                })
                .0,
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn nonzero_taps(&self) -> usize {
        self.taps.iter().filter(|&&t| t != 0.0).count()
    }
}

/// Samples `n_rooms` rooms from `set`, then `n_rirs_per_room` source/mic
/// placements in each. Room-level draws (dims, reflection) and each
/// placement use independent seeded streams, so results do not depend on
/// evaluation order.
pub fn sample_rooms(
    set: RoomSet,
    n_rooms: usize,
    n_rirs_per_room: usize,
    seed: u64,
) -> Result<Vec<RoomSpec>> {
    if n_rooms == 0 || n_rirs_per_room == 0 {
        return Err(Error::Argument(
            "need at least one room and one RIR per room".into(),
        ));
    }
    let ranges = set.dim_ranges();
    let mut out = Vec::with_capacity(n_rooms * n_rirs_per_room);
    for room in 0..n_rooms {
        let mut rng = rng_for(seed, &[set.tag(), room as u64]);
        let dims = [
            rng.random_range(ranges[0].0..ranges[0].1),
            rng.random_range(ranges[1].0..ranges[1].1),
            rng.random_range(ranges[2].0..ranges[2].1),
        ];
        let reflection = rng.random_range(0.2..0.8);
        for k in 0..n_rirs_per_room {
            let place_seed =
                crate::util::derive_seed(seed, &[set.tag(), room as u64, 1 + k as u64]);
            let mut prng = rng_for(place_seed, &[]);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
                std::array::from_fn(|a| rng.random_range(WALL_MARGIN..dims[a] - WALL_MARGIN))
            };
            let source = draw(&mut prng);
            let mut mic = draw(&mut prng);
            while mic == source {
                mic = draw(&mut prng);
            }
            let mut spec = RoomSpec::new(dims, source, mic, reflection);
            spec.seed = place_seed;
            out.push(spec);
        }
    }
    Ok(out)
}

/// Generates a pool of responses in parallel; order follows `specs`.
pub fn generate_pool(specs: &[RoomSpec], options: &RirOptions) -> Result<Vec<Rir>> {
    specs
        .par_iter()
        .map(|s| image_method_with(s, options))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s1_counts_and_ranges() {
        let specs = sample_rooms(RoomSet::S1, 200, 100, 7).unwrap();
        assert_eq!(specs.len(), 20_000);
        for s in &specs {
            assert!((1.0..=10.0).contains(&s.dims[0]));
            assert!((1.0..=10.0).contains(&s.dims[1]));
            assert!((2.0..=5.0).contains(&s.dims[2]));
            assert!((0.2..=0.8).contains(&s.reflection));
            for a in 0..3 {
                assert!(s.source[a] >= WALL_MARGIN && s.source[a] <= s.dims[a] - WALL_MARGIN);
                assert!(s.mic[a] >= WALL_MARGIN && s.mic[a] <= s.dims[a] - WALL_MARGIN);
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn three_sets_make_sixty_thousand() {
        let total: usize = RoomSet::ALL
            .iter()
            .map(|&set| sample_rooms(set, 200, 100, 1).unwrap().len())
            .sum();
        assert_eq!(total, 60_000);
    }

    #[test]
    fn set_ranges_respected() {
        for set in RoomSet::ALL {
            let r = set.dim_ranges();
            for s in sample_rooms(set, 30, 2, 3).unwrap() {
                for a in 0..3 {
                    assert!(s.dims[a] >= r[a].0 && s.dims[a] <= r[a].1);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_rooms(RoomSet::S2, 5, 4, 99).unwrap();
        let b = sample_rooms(RoomSet::S2, 5, 4, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_rooms(RoomSet::S2, 5, 4, 100).unwrap());
    }

    #[test]
    fn rooms_share_reflection_across_placements() {
        let specs = sample_rooms(RoomSet::S1, 3, 5, 0).unwrap();
        for room in specs.chunks(5) {
            assert!(room.iter().all(|s| s.reflection == room[0].reflection));
            assert!(room.iter().all(|s| s.dims == room[0].dims));
        }
    }

    #[test]
    fn unknown_set_is_argument_error() {
        assert!(matches!("S4".parse::<RoomSet>(), Err(Error::Argument(_))));
        assert_eq!("S3".parse::<RoomSet>().unwrap(), RoomSet::S3);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(sample_rooms(RoomSet::S1, 0, 1, 0).is_err());
        assert!(sample_rooms(RoomSet::S1, 1, 0, 0).is_err());
    }
}
