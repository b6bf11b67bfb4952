//! Monte Carlo path simulation for the jump-diffusion model class.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::{InitialDist, JumpCoeff, SdeError, SdeModel};

/// Time-stepping scheme. `Rk4Drift` integrates the drift with classical
/// four-stage Runge-Kutta and adds an Euler-Maruyama noise increment per step;
/// both schemes evaluate coefficients at the pre-step state (left limit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4Drift,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub scheme: Scheme,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub store_times: Vec<f64>,
}

/// Simulated path states at the requested times. Exploded paths (non-finite
/// state) are excluded from `states` and accounted for in `excluded`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    /// One `(n_kept, d)` array per stored time, rows in path order.
    pub states: Vec<Array2<f64>>,
    /// Jump events per kept path and jump column, over the whole horizon.
    pub jump_counts: Array2<u64>,
    pub excluded: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub dt: f64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    pub fn time_index(&self, t: f64) -> Result<usize, SdeError> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9)
            .ok_or(SdeError::TimeNotStored(t))
    }
}

const CHUNK: usize = 1024;
const EXPLOSION_LIMIT: f64 = 0.01;

pub fn simulate(model: &SdeModel, init: &InitialDist, opts: &SimOptions) -> Result<PathEnsemble, SdeError> {
    if !(opts.dt > 0.0) {
        return Err(SdeError::InvalidOptions("dt must be positive".into()));
    }
    if opts.n_paths == 0 {
        return Err(SdeError::InvalidOptions("n_paths must be at least 1".into()));
    }
    if opts.store_times.is_empty() {
        return Err(SdeError::InvalidOptions("store_times must not be empty".into()));
    }
    if opts.store_times.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(SdeError::InvalidOptions("store_times must be finite and non-negative".into()));
    }
    if init.dim() != model.dim() {
        return Err(SdeError::InvalidOptions("initial distribution dimension mismatch".into()));
    }
    for col in model.jumps() {
        let ldt = col.process.intensity * opts.dt;
        if ldt > 0.1 {
            eprintln!("warning: lambda*dt = {ldt:.3} > 0.1; jump increments may be inaccurate");
        }
    }

    let mut times: Vec<f64> = opts.store_times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let t_end = *times.last().unwrap();
    let n_steps = (t_end / opts.dt).round().max(0.0) as usize;
    // snap each requested time to the nearest step index
    let store_steps: Vec<usize> = times
        .iter()
        .map(|&t| ((t / opts.dt).round() as usize).min(n_steps))
        .collect();

    let d = model.dim();
    let m_c = model.jumps().len();
    let n_times = times.len();

    struct PathResult {
        states: Vec<f64>, // n_times * d
        jumps: Vec<u64>,  // m_c
        exploded: bool,
    }

    let run_path = |p: usize| -> PathResult {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(p as u64 + 1);
        let mut x = vec![0.0; d];
        init.sample(&mut rng, &mut x);
        let mut stored = vec![f64::NAN; n_times * d];
        let mut jumps = vec![0u64; m_c];
        let mut exploded = false;

        let mut store_cursor = 0;
        let mut record = |step: usize, x: &[f64], cursor: &mut usize| {
            while *cursor < n_times && store_steps[*cursor] == step {
                stored[*cursor * d..(*cursor + 1) * d].copy_from_slice(x);
                *cursor += 1;
            }
        };
        record(0, &x, &mut store_cursor);

        let sqrt_dt = opts.dt.sqrt();
        let mut drift = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut stage = vec![0.0; d];

        for step in 1..=n_steps {
            if !exploded {
                let mut next = x.clone();
                match opts.scheme {
                    Scheme::Euler => {
                        model.drift_eval(&x, &mut drift);
                        for i in 0..d {
                            next[i] += drift[i] * opts.dt;
                        }
                    }
                    Scheme::Rk4Drift => {
                        model.drift_eval(&x, &mut drift);
                        for i in 0..d {
                            stage[i] = x[i] + 0.5 * opts.dt * drift[i];
                        }
                        model.drift_eval(&stage, &mut k2);
                        for i in 0..d {
                            stage[i] = x[i] + 0.5 * opts.dt * k2[i];
                        }
                        model.drift_eval(&stage, &mut k3);
                        for i in 0..d {
                            stage[i] = x[i] + opts.dt * k3[i];
                        }
                        model.drift_eval(&stage, &mut k4);
                        for i in 0..d {
                            next[i] += opts.dt / 6.0 * (drift[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                        }
                    }
                }
                // Gaussian increment b(X(t-)) sqrt(dt) N(0, I)
                let m_b = model.n_gwn();
                for w in 0..m_b {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    for i in 0..d {
                        let b = model.gwn()[i][w].eval(&x);
                        if b != 0.0 {
                            next[i] += b * sqrt_dt * z;
                        }
                    }
                }
                // jump increment c(X(t-)) dC with Poisson(lambda dt) events
                for (r, col) in model.jumps().iter().enumerate() {
                    let pois = Poisson::new(col.process.intensity * opts.dt)
                        .expect("intensity validated at construction");
                    let k: f64 = pois.sample(&mut rng);
                    let k = k as u64;
                    jumps[r] += k;
                    if k == 0 {
                        continue;
                    }
                    let mut total = 0.0;
                    for _ in 0..k {
                        total += col.process.dist.sample(&mut rng);
                    }
                    match &col.coeff {
                        JumpCoeff::Constant(c) => {
                            for i in 0..d {
                                next[i] += c[i] * total;
                            }
                        }
                        JumpCoeff::LinearState => {
                            for i in 0..d {
                                next[i] += x[i] * total;
                            }
                        }
                    }
                }
                if next.iter().any(|v| !v.is_finite()) {
                    exploded = true;
                } else {
                    x = next;
                }
            } else {
                // keep consuming randomness? No: the path is dropped entirely,
                // so the remaining draws are irrelevant to other paths (each
                // path owns its RNG stream).
            }
            record(step, &x, &mut store_cursor);
        }
        PathResult { states: stored, jumps, exploded }
    };

    // Per-path RNG streams make the result independent of the parallel
    // schedule; chunks are stitched back in path order.
    let results: Vec<PathResult> = (0..opts.n_paths)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|&p| run_path(p)).collect::<Vec<_>>())
        .flatten_iter()
        .collect();

    let excluded = results.iter().filter(|r| r.exploded).count();
    if excluded as f64 > EXPLOSION_LIMIT * opts.n_paths as f64 {
        return Err(SdeError::TooManyExplosions { excluded, total: opts.n_paths });
    }
    let kept = opts.n_paths - excluded;
    let mut states: Vec<Array2<f64>> = (0..n_times).map(|_| Array2::zeros((kept, d))).collect();
    let mut jump_counts = Array2::zeros((kept, m_c));
    let mut row = 0;
    for r in results.iter().filter(|r| !r.exploded) {
        for ti in 0..n_times {
            for i in 0..d {
                states[ti][[row, i]] = r.states[ti * d + i];
            }
        }
        for c in 0..m_c {
            jump_counts[[row, c]] = r.jumps[c];
        }
        row += 1;
    }
    if excluded > 0 {
        eprintln!("warning: excluded {excluded} exploded paths out of {}", opts.n_paths);
    }

    Ok(PathEnsemble {
        times,
        states,
        jump_counts,
        excluded,
        seed: opts.seed,
        scheme: opts.scheme,
        dt: opts.dt,
    })
}
