use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{DenseMatrix, DenseVector};

/// Key of an independent, reproducible random stream.
///
/// A stream is ChaCha8 seeded from `master_seed` with its 64-bit stream
/// counter set to `stream_id`, so two keys that differ only in `stream_id`
/// never share keystream. Child streams are derived by hashing a tag into the
/// stream id, which keeps per-trial streams independent of scheduling order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Child stream keyed by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(
                self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)),
            ),
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Matrix of i.i.d. `N(0, variance)` entries, filled in column-major order.
///
/// `variance` must be positive; configuration parsing is responsible for rejecting zero.
pub fn gaussian_matrix(stream: &RngStream, rows: usize, cols: usize, variance: f64) -> DenseMatrix {
    debug_assert!(variance > 0.0 && rows > 0 && cols > 0);
    let sd = variance.sqrt();
    let mut rng = stream.rng();
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    DenseMatrix::from_col_major_unchecked(rows, cols, data)
}

pub fn gaussian_vector(stream: &RngStream, dim: usize, variance: f64) -> DenseVector {
    let sd = variance.sqrt();
    let mut rng = stream.rng();
    DenseVector::from_vec_unchecked(
        (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sd
            })
            .collect(),
    )
}
