//! Geometric channel generation and CSI datasets.
//!
//! A network instance has `M` transmitter-receiver pairs dropped in the
//! plane. Node `i`'s transmitter has `T` antennas, its receiver `R`
//! antennas. The channel from transmitter `j` to receiver `i` is an `R x T`
//! matrix whose entries combine small-scale fading with a path-loss factor
//! `1 / (1 + l_ij^3)` in the distance `l_ij` from transmitter `j` to
//! receiver `i`:
//!
//! * Rayleigh: `h = (a + i b) / (sqrt(2) (1 + l^3))` with `a, b ~ N(0, 1)`,
//! * Rician:   `h = (a + i b) / (1 + l^3)` with `a, b ~ N(mu_k, s_k)`,
//!   `mu_k = sqrt(k / (2(k+1)))`, `s_k = sqrt(1 / (2(k+1)))` for K-factor
//!   `k`, so the coefficient keeps unit average power at `l = 0`.
//!
//! Positions are uniform on the square `[0, sqrt(M)]^2` or Gaussian around
//! its center (unclipped), which keeps node density constant as `M` grows.
//!
//! Everything is deterministic given a seed; per-sample streams are derived
//! with [`crate::seed::derive_indexed`] so sample `k` of a dataset does not
//! depend on how many other samples are drawn.

use crate::linalg::CMatrix;
use crate::seed;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("distortion rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("dataset tensors must share one shape: {lhs:?} vs {rhs:?}")]
    MixedShapes {
        lhs: (usize, usize, usize),
        rhs: (usize, usize, usize),
    },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset magic at byte 0, expected \"UWMM\"")]
    BadMagic,
    #[error("unsupported dataset version {version} (at byte {offset})")]
    BadVersion { version: u32, offset: u64 },
    #[error("truncated dataset: {needed} more bytes expected at offset {offset}")]
    Truncated { offset: u64, needed: usize },
}

/// Static description of a network instance family.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Number of transmitter-receiver pairs.
    pub m: usize,
    /// Transmit antennas per node.
    pub t: usize,
    /// Receive antennas per node.
    pub r: usize,
    /// Streams per node.
    pub d: usize,
    /// Noise standard deviation at every receiver.
    pub sigma: f64,
    /// Per-node transmit power budget.
    pub pmax: f64,
    /// Sum-rate weights, one per node.
    pub alpha: Vec<f64>,
}

impl NetworkConfig {
    /// Uniformly weighted config.
    pub fn new(m: usize, t: usize, r: usize, d: usize, sigma: f64, pmax: f64) -> Self {
        NetworkConfig {
            m,
            t,
            r,
            d,
            sigma,
            pmax,
            alpha: vec![1.0; m],
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.m == 0 || self.t == 0 || self.r == 0 || self.d == 0 {
            return Err(ChannelError::InvalidConfig(
                "M, T, R, d must all be positive".into(),
            ));
        }
        if self.d > self.t.min(self.r) {
            return Err(ChannelError::InvalidConfig(format!(
                "d = {} exceeds min(T, R) = {}",
                self.d,
                self.t.min(self.r)
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(ChannelError::InvalidConfig(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.pmax > 0.0) || !self.pmax.is_finite() {
            return Err(ChannelError::InvalidConfig(format!(
                "pmax must be finite and positive, got {}",
                self.pmax
            )));
        }
        if self.alpha.len() != self.m {
            return Err(ChannelError::InvalidConfig(format!(
                "alpha has {} entries for M = {}",
                self.alpha.len(),
                self.m
            )));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(ChannelError::InvalidConfig(
                "alpha entries must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn with_m(&self, m: usize) -> Self {
        let mut c = self.clone();
        c.m = m;
        c.alpha = vec![1.0; m];
        c
    }
}

impl Default for NetworkConfig {
    /// The bench-scale operating point: 10 pairs, 5x3 antennas, single
    /// stream, unit power budget, low noise.
    fn default() -> Self {
        NetworkConfig::new(10, 5, 3, 1, 2.6e-5, 1.0)
    }
}

/// Node placement model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpatialDist {
    /// Uniform over `[0, sqrt(M)]^2`.
    Uniform,
    /// Isotropic Gaussian around the square center, not clipped.
    Gaussian { stddev: f64 },
}

/// Small-scale fading model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FadingSpec {
    Rayleigh,
    /// Line-of-sight fading with linear K-factor `k`.
    Rician { k: f64 },
}

/// Transmitter and receiver positions with the derived distance table.
#[derive(Clone, Debug)]
pub struct Topology {
    pub m: usize,
    pub tx: Vec<(f64, f64)>,
    pub rx: Vec<(f64, f64)>,
    /// `dist[i * m + j]` is the distance from transmitter `j` to receiver `i`.
    dist: Vec<f64>,
}

impl Topology {
    pub fn from_positions(tx: Vec<(f64, f64)>, rx: Vec<(f64, f64)>) -> Self {
        assert_eq!(tx.len(), rx.len(), "topology: tx/rx count mismatch");
        let m = tx.len();
        let mut dist = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let dx = rx[i].0 - tx[j].0;
                let dy = rx[i].1 - tx[j].1;
                dist[i * m + j] = (dx * dx + dy * dy).sqrt();
            }
        }
        Topology { m, tx, rx, dist }
    }

    /// Distance from transmitter `j` to receiver `i`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.m + j]
    }
}

/// Channel-state tensor for one network instance: an `M x M` grid of
/// `R x T` blocks, stored row-major as `[i][j][p][q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor {
    pub m: usize,
    pub r: usize,
    pub t: usize,
    data: Vec<Complex64>,
}

impl CsiTensor {
    pub fn zeros(m: usize, r: usize, t: usize) -> Self {
        CsiTensor {
            m,
            r,
            t,
            data: vec![Complex64::new(0.0, 0.0); m * m * r * t],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.r, self.t)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn entry(&self, i: usize, j: usize, p: usize, q: usize) -> Complex64 {
        self.data[((i * self.m + j) * self.r + p) * self.t + q]
    }

    pub fn set_entry(&mut self, i: usize, j: usize, p: usize, q: usize, v: Complex64) {
        self.data[((i * self.m + j) * self.r + p) * self.t + q] = v;
    }

    /// Channel block from transmitter `j` to receiver `i` as an `R x T`
    /// matrix.
    pub fn block(&self, i: usize, j: usize) -> CMatrix {
        let start = (i * self.m + j) * self.r * self.t;
        CMatrix::from_rows(self.r, self.t, &self.data[start..start + self.r * self.t])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Relabels nodes: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permute(&self, perm: &[usize]) -> CsiTensor {
        assert_eq!(perm.len(), self.m, "permute: bad permutation length");
        let mut out = CsiTensor::zeros(self.m, self.r, self.t);
        for i in 0..self.m {
            for j in 0..self.m {
                for p in 0..self.r {
                    for q in 0..self.t {
                        out.set_entry(i, j, p, q, self.entry(perm[i], perm[j], p, q));
                    }
                }
            }
        }
        out
    }
}

/// One Rayleigh-faded coefficient at distance `l`.
pub fn rayleigh_coefficient(l: f64, rng: &mut impl Rng) -> Complex64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let a: f64 = std_normal.sample(rng);
    let b: f64 = std_normal.sample(rng);
    let scale = 1.0 / (std::f64::consts::SQRT_2 * (1.0 + l * l * l));
    Complex64::new(a * scale, b * scale)
}

/// One Rician-faded coefficient at distance `l` with linear K-factor `k`.
pub fn rician_coefficient(l: f64, k: f64, rng: &mut impl Rng) -> Complex64 {
    let mean = (k / (2.0 * (k + 1.0))).sqrt();
    let std = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let comp = Normal::new(mean, std).unwrap();
    let a: f64 = comp.sample(rng);
    let b: f64 = comp.sample(rng);
    let scale = 1.0 / (1.0 + l * l * l);
    Complex64::new(a * scale, b * scale)
}

/// Draws transmitter and receiver positions. All 2M nodes are placed
/// independently; draw order is transmitters `0..M` then receivers `0..M`,
/// x before y.
pub fn sample_topology(m: usize, spatial: SpatialDist, seed_value: u64) -> Topology {
    let mut rng = seed::rng(seed_value, "topology");
    let side = (m as f64).sqrt();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> (f64, f64) {
        match spatial {
            SpatialDist::Uniform => (rng.random_range(0.0..side), rng.random_range(0.0..side)),
            SpatialDist::Gaussian { stddev } => {
                let n = Normal::new(0.0, stddev).unwrap();
                (side / 2.0 + n.sample(rng), side / 2.0 + n.sample(rng))
            }
        }
    };
    let tx: Vec<(f64, f64)> = (0..m).map(|_| draw(&mut rng)).collect();
    let rx: Vec<(f64, f64)> = (0..m).map(|_| draw(&mut rng)).collect();
    Topology::from_positions(tx, rx)
}

/// Draws the fading realization over a topology. Entries are generated in
/// `[i][j][p][q]` row-major order.
pub fn sample_csi(
    topology: &Topology,
    fading: FadingSpec,
    r: usize,
    t: usize,
    seed_value: u64,
) -> CsiTensor {
    let mut rng = seed::rng(seed_value, "fading");
    let m = topology.m;
    let mut csi = CsiTensor::zeros(m, r, t);
    for i in 0..m {
        for j in 0..m {
            let l = topology.distance(i, j);
            for p in 0..r {
                for q in 0..t {
                    let h = match fading {
                        FadingSpec::Rayleigh => rayleigh_coefficient(l, &mut rng),
                        FadingSpec::Rician { k } => rician_coefficient(l, k, &mut rng),
                    };
                    csi.set_entry(i, j, p, q, h);
                }
            }
        }
    }
    csi
}

/// Adds Gaussian noise to exactly `floor(rate * M * M * R * T)` coefficients
/// chosen uniformly without replacement. `sigma_r` is the standard deviation
/// of each real component; `sigma_r = 0` or `rate = 0` returns the input
/// unchanged bit for bit.
pub fn distort_csi(
    csi: &CsiTensor,
    rate: f64,
    sigma_r: f64,
    seed_value: u64,
) -> Result<CsiTensor, ChannelError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ChannelError::BadRate(rate));
    }
    let mut out = csi.clone();
    let n = csi.data.len();
    let count = (rate * n as f64).floor() as usize;
    if count == 0 || sigma_r == 0.0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed_value, "distortion");
    // Partial Fisher-Yates: the first `count` slots end up holding a
    // uniform sample without replacement.
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..count {
        let j = rng.random_range(k..n);
        idx.swap(k, j);
    }
    let noise = Normal::new(0.0, sigma_r).unwrap();
    for &i in &idx[..count] {
        let c: f64 = noise.sample(&mut rng);
        let d: f64 = noise.sample(&mut rng);
        out.data[i] += Complex64::new(c, d);
    }
    Ok(out)
}

/// Deterministic stream of network instances: sample `k` is fully
/// determined by `(seed, k)`.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    pub config: NetworkConfig,
    pub spatial: SpatialDist,
    pub fading: FadingSpec,
    pub seed: u64,
}

impl ChannelSampler {
    pub fn new(config: NetworkConfig, spatial: SpatialDist, fading: FadingSpec, seed: u64) -> Self {
        ChannelSampler {
            config,
            spatial,
            fading,
            seed,
        }
    }

    pub fn sample(&self, index: u64) -> CsiTensor {
        let topo = sample_topology(
            self.config.m,
            self.spatial,
            seed::derive_indexed(self.seed, "sampler-topology", index),
        );
        sample_csi(
            &topo,
            self.fading,
            self.config.r,
            self.config.t,
            seed::derive_indexed(self.seed, "sampler-fading", index),
        )
    }

    pub fn sample_many(&self, start: u64, count: usize) -> Vec<CsiTensor> {
        (0..count as u64).map(|k| self.sample(start + k)).collect()
    }

    /// Same stream parameters over a different network size.
    pub fn with_m(&self, m: usize) -> Self {
        let mut s = self.clone();
        s.config = self.config.with_m(m);
        s
    }

    pub fn with_spatial(&self, spatial: SpatialDist) -> Self {
        let mut s = self.clone();
        s.spatial = spatial;
        s
    }

    pub fn with_fading(&self, fading: FadingSpec) -> Self {
        let mut s = self.clone();
        s.fading = fading;
        s
    }
}

/// Dataset file contents.
#[derive(Debug)]
pub struct Dataset {
    /// Streams per node, carried in the header for config checking.
    pub d: usize,
    pub tensors: Vec<CsiTensor>,
}

const DATASET_MAGIC: &[u8; 4] = b"UWMM";
const DATASET_VERSION: u32 = 1;

/// Writes tensors to the binary dataset format:
/// magic `UWMM`, version u32, `M R T d` u32 each, count u64, then each
/// tensor's coefficients row-major as little-endian f64 (re, im) pairs.
pub fn save_dataset(path: &Path, tensors: &[CsiTensor], d: usize) -> Result<(), ChannelError> {
    let first = tensors.first().map(CsiTensor::shape).unwrap_or((0, 0, 0));
    for t in tensors {
        if t.shape() != first {
            return Err(ChannelError::MixedShapes {
                lhs: first,
                rhs: t.shape(),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    for dim in [first.0 as u32, first.1 as u32, first.2 as u32, d as u32] {
        w.write_all(&dim.to_le_bytes())?;
    }
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        for z in t.data() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. Errors carry the byte
/// offset at which parsing failed.
pub fn load_dataset(path: &Path) -> Result<Dataset, ChannelError> {
    let mut rd = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;
    let mut read_exact = |buf: &mut [u8], offset: &mut u64| -> Result<(), ChannelError> {
        match rd.read_exact(buf) {
            Ok(()) => {
                *offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(ChannelError::Truncated {
                    offset: *offset,
                    needed: buf.len(),
                })
            }
            Err(e) => Err(e.into()),
        }
    };

    let mut magic = [0u8; 4];
    read_exact(&mut magic, &mut offset)?;
    if &magic != DATASET_MAGIC {
        return Err(ChannelError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut u32buf, &mut offset)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DATASET_VERSION {
        return Err(ChannelError::BadVersion {
            version,
            offset: offset - 4,
        });
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        read_exact(&mut u32buf, &mut offset)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let [m, r, t, d] = dims;
    let mut u64buf = [0u8; 8];
    read_exact(&mut u64buf, &mut offset)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let per_tensor = m * m * r * t;
    let mut tensors = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        let mut data = Vec::with_capacity(per_tensor);
        for _ in 0..per_tensor {
            read_exact(&mut f64buf, &mut offset)?;
            let re = f64::from_le_bytes(f64buf);
            read_exact(&mut f64buf, &mut offset)?;
            let im = f64::from_le_bytes(f64buf);
            data.push(Complex64::new(re, im));
        }
        tensors.push(CsiTensor { m, r, t, data });
    }
    Ok(Dataset { d, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_bad_fields() {
        assert!(NetworkConfig::default().validate().is_ok());
        let mut c = NetworkConfig::default();
        c.d = 4;
        assert!(c.validate().is_err(), "d > min(T, R)");
        let mut c = NetworkConfig::default();
        c.pmax = 0.0;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.alpha.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_positions_stay_in_square() {
        let m = 25;
        let side = (m as f64).sqrt();
        let topo = sample_topology(m, SpatialDist::Uniform, 1);
        for &(x, y) in topo.tx.iter().chain(&topo.rx) {
            assert!((0.0..=side).contains(&x) && (0.0..=side).contains(&y));
        }
    }

    #[test]
    fn distance_convention_is_tx_to_rx() {
        let topo = Topology::from_positions(
            vec![(0.0, 0.0), (3.0, 0.0)],
            vec![(0.0, 4.0), (3.0, 4.0)],
        );
        // Receiver 0 to transmitter 1: hypotenuse of a 3-4 triangle.
        assert!((topo.distance(0, 1) - 5.0).abs() < 1e-12);
        assert!((topo.distance(0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let topo1 = sample_topology(6, SpatialDist::Uniform, 42);
        let topo2 = sample_topology(6, SpatialDist::Uniform, 42);
        assert_eq!(topo1.tx, topo2.tx);
        assert_eq!(topo1.rx, topo2.rx);
        let a = sample_csi(&topo1, FadingSpec::Rayleigh, 3, 5, 7);
        let b = sample_csi(&topo2, FadingSpec::Rayleigh, 3, 5, 7);
        assert_eq!(a, b);
        let c = sample_csi(&topo1, FadingSpec::Rayleigh, 3, 5, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn rayleigh_moments_match_model() {
        let mut rng = seed::rng(3, "stats");
        let l: f64 = 1.3;
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let h = rayleigh_coefficient(l, &mut rng);
            sum += h.re;
            sumsq += h.re * h.re;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let denom = 1.0 + l.powi(3);
        let expected_var = 1.0 / (2.0 * denom * denom);
        let se_mean = (expected_var / n as f64).sqrt();
        let se_var = expected_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * se_mean, "mean {mean}");
        assert!((var - expected_var).abs() < 4.0 * se_var, "var {var}");
    }

    #[test]
    fn rician_mean_matches_model() {
        let mut rng = seed::rng(4, "stats");
        let (l, k) = (0.7_f64, 100.0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += rician_coefficient(l, k, &mut rng).re;
        }
        let mean = sum / n as f64;
        let denom = 1.0 + l.powi(3);
        let expected = (k / (2.0 * (k + 1.0))).sqrt() / denom;
        let std = (1.0 / (2.0 * (k + 1.0))).sqrt() / denom;
        let se = std / (n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected}");
    }

    #[test]
    fn distortion_touches_exactly_the_requested_count() {
        let topo = sample_topology(10, SpatialDist::Uniform, 5);
        let csi = sample_csi(&topo, FadingSpec::Rayleigh, 3, 5, 6);
        let out = distort_csi(&csi, 0.5, 1e-3, 11).unwrap();
        let differing = csi
            .data()
            .iter()
            .zip(out.data())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(differing, 750); // floor(0.5 * 10 * 10 * 3 * 5)
    }

    #[test]
    fn distortion_edge_cases_return_input() {
        let topo = sample_topology(4, SpatialDist::Uniform, 5);
        let csi = sample_csi(&topo, FadingSpec::Rayleigh, 2, 3, 6);
        assert_eq!(distort_csi(&csi, 0.0, 1e-3, 1).unwrap(), csi);
        assert_eq!(distort_csi(&csi, 1.0, 0.0, 1).unwrap(), csi);
        assert!(distort_csi(&csi, 1.5, 1e-3, 1).is_err());
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let sampler = ChannelSampler::new(
            NetworkConfig::new(4, 5, 3, 1, 1e-3, 1.0),
            SpatialDist::Uniform,
            FadingSpec::Rayleigh,
            9,
        );
        let tensors = sampler.sample_many(0, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        save_dataset(&path, &tensors, 1).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.d, 1);
        assert_eq!(ds.tensors, tensors);
    }

    #[test]
    fn dataset_rejects_bad_magic_and_truncation() {
        let sampler = ChannelSampler::new(
            NetworkConfig::new(2, 2, 2, 1, 1e-3, 1.0),
            SpatialDist::Uniform,
            FadingSpec::Rayleigh,
            9,
        );
        let tensors = sampler.sample_many(0, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        save_dataset(&path, &tensors, 1).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_dataset(&bad), Err(ChannelError::BadMagic)));

        let full = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &full[..full.len() - 3]).unwrap();
        match load_dataset(&cut) {
            Err(ChannelError::Truncated { offset, .. }) => {
                assert_eq!(offset, (full.len() - 3 - 5) as u64);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn permute_relabels_blocks() {
        let topo = sample_topology(3, SpatialDist::Uniform, 2);
        let csi = sample_csi(&topo, FadingSpec::Rayleigh, 2, 2, 3);
        let perm = [2usize, 0, 1];
        let p = csi.permute(&perm);
        assert_eq!(p.block(0, 1), csi.block(2, 0));
        assert_eq!(p.block(2, 2), csi.block(1, 1));
    }
}
