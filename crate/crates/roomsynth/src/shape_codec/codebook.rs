//! Vector-quantization codebook with EMA updates, Laplace-smoothed counts,
//! and dead-code reseeding. The codebook is not a gradient parameter; the
//! training loop feeds it encoder outputs after every step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Chunk;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f64>, // [size, dim]
    cluster_size: Vec<f64>,
    cluster_sum: Vec<f64>, // [size, dim]
    unused_steps: Vec<u32>,
    pub decay: f64,
    pub smoothing_eps: f64,
    pub dead_code_steps: u32,
    /// Per-step assignment mass: counts are normalized so every update
    /// distributes exactly this much across the entries, keeping the
    /// cluster-size total constant.
    mass: f64,
    /// Entries are re-seeded from the first batch of encoder rows; random
    /// initialization sits far from the data and collapses the encoder
    /// through the commitment loss before learning starts.
    needs_data_init: bool,
}

impl Codebook {
    pub fn init(size: usize, dim: usize, mass: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(size > 0 && dim > 0 && mass > 0.0);
        let entries: Vec<f64> = (0..size * dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let per = mass / size as f64;
        let cluster_sum = entries.iter().map(|v| v * per).collect();
        Codebook {
            dim,
            entries,
            cluster_size: vec![per; size],
            cluster_sum,
            unused_steps: vec![0; size],
            decay: 0.99,
            smoothing_eps: 1e-5,
            dead_code_steps: 50,
            mass,
            needs_data_init: true,
        }
    }

    /// Entries become (noisy copies of) actual encoder rows, tiled when the
    /// batch is smaller than the codebook.
    fn data_init(&mut self, rows: &[f64], n_rows: usize, rng: &mut ChaCha8Rng) {
        let size = self.size();
        let per = self.mass / size as f64;
        for id in 0..size {
            let src = id % n_rows;
            let noise_scale = if id < n_rows { 0.0 } else { 0.01 };
            for d in 0..self.dim {
                let v = rows[src * self.dim + d] + noise_scale * rng.gen_range(-1.0..1.0);
                self.entries[id * self.dim + d] = v;
                self.cluster_sum[id * self.dim + d] = v * per;
            }
            self.cluster_size[id] = per;
        }
        self.needs_data_init = false;
    }

    pub fn size(&self) -> usize {
        self.cluster_size.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, id: usize) -> &[f64] {
        &self.entries[id * self.dim..(id + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> &[f64] {
        &self.cluster_size
    }

    /// Nearest entry by Euclidean distance; ties pick the lowest index.
    pub fn nearest(&self, row: &[f64]) -> usize {
        assert_eq!(row.len(), self.dim);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for id in 0..self.size() {
            let e = self.entry(id);
            let d: f64 = row.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = id;
            }
        }
        best
    }

    pub fn quantize_rows(&self, rows: &[f64]) -> Vec<usize> {
        assert_eq!(rows.len() % self.dim, 0);
        rows.chunks(self.dim).map(|r| self.nearest(r)).collect()
    }

    pub fn lookup_rows(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            out.extend_from_slice(self.entry(id));
        }
        out
    }

    /// EMA update from one training step's encoder rows and assignments,
    /// followed by dead-code reseeding.
    pub fn ema_update(&mut self, rows: &[f64], ids: &[usize], rng: &mut ChaCha8Rng) {
        let n_rows = ids.len();
        assert_eq!(rows.len(), n_rows * self.dim);
        assert!(n_rows > 0);
        if self.needs_data_init {
            self.data_init(rows, n_rows, rng);
            return;
        }
        let size = self.size();
        let norm = self.mass / n_rows as f64;

        let mut counts = vec![0.0; size];
        let mut sums = vec![0.0; size * self.dim];
        for (i, &id) in ids.iter().enumerate() {
            counts[id] += norm;
            for d in 0..self.dim {
                sums[id * self.dim + d] += rows[i * self.dim + d] * norm;
            }
        }

        for id in 0..size {
            self.cluster_size[id] =
                self.decay * self.cluster_size[id] + (1.0 - self.decay) * counts[id];
            for d in 0..self.dim {
                let slot = id * self.dim + d;
                self.cluster_sum[slot] =
                    self.decay * self.cluster_sum[slot] + (1.0 - self.decay) * sums[slot];
            }
            if counts[id] > 0.0 {
                self.unused_steps[id] = 0;
            } else {
                self.unused_steps[id] += 1;
            }
        }

        self.reseed_dead_codes(rows, n_rows, rng);
        self.refresh_entries();
    }

    fn reseed_dead_codes(&mut self, rows: &[f64], n_rows: usize, rng: &mut ChaCha8Rng) {
        let size = self.size();
        let per = self.mass / size as f64;
        let mut reseeded = false;
        for id in 0..size {
            if self.unused_steps[id] < self.dead_code_steps {
                continue;
            }
            let pick = rng.gen_range(0..n_rows);
            let row = &rows[pick * self.dim..(pick + 1) * self.dim];
            self.cluster_size[id] = per;
            for d in 0..self.dim {
                self.cluster_sum[id * self.dim + d] = row[d] * per;
            }
            self.unused_steps[id] = 0;
            reseeded = true;
        }
        if reseeded {
            // Restore the total mass; a common rescale leaves every
            // sum/size ratio (and so every entry) unchanged.
            let total: f64 = self.cluster_size.iter().sum();
            let factor = self.mass / total;
            self.cluster_size.iter_mut().for_each(|v| *v *= factor);
            self.cluster_sum.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn refresh_entries(&mut self) {
        let size = self.size();
        let total: f64 = self.cluster_size.iter().sum();
        let denom_total = total + size as f64 * self.smoothing_eps;
        for id in 0..size {
            let smoothed = (self.cluster_size[id] + self.smoothing_eps) / denom_total * total;
            for d in 0..self.dim {
                self.entries[id * self.dim + d] = self.cluster_sum[id * self.dim + d] / smoothed;
            }
        }
    }

    pub fn to_chunks(&self) -> Vec<Chunk> {
        vec![
            Chunk {
                name: "codebook.entries".to_string(),
                extents: vec![self.size() as u64, self.dim as u64],
                payload: self.entries.clone(),
            },
            Chunk {
                name: "codebook.cluster_size".to_string(),
                extents: vec![self.size() as u64],
                payload: self.cluster_size.clone(),
            },
            Chunk {
                name: "codebook.cluster_sum".to_string(),
                extents: vec![self.size() as u64, self.dim as u64],
                payload: self.cluster_sum.clone(),
            },
            Chunk {
                name: "codebook.unused_steps".to_string(),
                extents: vec![self.size() as u64],
                payload: self.unused_steps.iter().map(|&v| v as f64).collect(),
            },
            Chunk {
                name: "codebook.meta".to_string(),
                extents: vec![5],
                payload: vec![
                    self.decay,
                    self.smoothing_eps,
                    self.dead_code_steps as f64,
                    self.mass,
                    if self.needs_data_init { 1.0 } else { 0.0 },
                ],
            },
        ]
    }

    pub fn from_chunks(chunks: &[Chunk], size: usize, dim: usize) -> Option<Self> {
        let find = |name: &str| chunks.iter().find(|c| c.name == name);
        let entries = find("codebook.entries")?.payload.clone();
        let cluster_size = find("codebook.cluster_size")?.payload.clone();
        let cluster_sum = find("codebook.cluster_sum")?.payload.clone();
        let unused = find("codebook.unused_steps")?;
        let meta = find("codebook.meta")?;
        if entries.len() != size * dim || cluster_size.len() != size {
            return None;
        }
        Some(Codebook {
            dim,
            entries,
            cluster_size,
            cluster_sum,
            unused_steps: unused.payload.iter().map(|&v| v as u32).collect(),
            decay: meta.payload[0],
            smoothing_eps: meta.payload[1],
            dead_code_steps: meta.payload[2] as u32,
            mass: meta.payload[3],
            needs_data_init: meta.payload.get(4).copied().unwrap_or(0.0) != 0.0,
        })
    }
}
