use rayon::prelude::*;

use super::{Barrier, PathMode, ProjectionMode, Reflection, SolverConfig, SolverError, TrainedSolution, ZTimeConvention};
use crate::metrics::{triangle_index, triangle_len, SolutionValues};
use crate::nn::{AdamConfig, AdamState, Batch, ForwardCache, Gradients, Mlp, NnError};
use crate::paths::rng::{derive_seed, tags};
use crate::paths::{PathBatch, TimeGrid};
use crate::problem::{BsvieProblem, GenArgs};

/// Backward sweep shared by the plain and reflected solvers.
///
/// With `reflection` set, every value handed to an earlier step is
/// `max(Y, L)`; with [`ProjectionMode::PerEpoch`] the current step's own
/// value inside `f` is projected too.
pub fn train_with(problem: &BsvieProblem, config: &SolverConfig, reflection: Option<&Reflection>) -> Result<TrainedSolution, SolverError> {
    config.validate()?;
    problem.validate(config.lipschitz_bound, config.seed)?;
    let grid = TimeGrid::new(problem.horizon, config.n_steps)?;
    let big_n = grid.n_steps();
    let (ns, dy, dz) = (problem.state_dim, problem.value_dim, problem.z_dim());
    let m_paths = config.n_paths;
    let barrier = reflection.map(|r| r.barrier.as_ref());
    let project_current = reflection.is_some_and(|r| r.mode == ProjectionMode::PerEpoch);
    let uses_y = problem.generator.uses_y();
    let adam = AdamConfig::with_learning_rate(config.learning_rate);

    let y_dims = config.y_dims(ns, dy);
    let z_dims = config.z_dims(ns, dz);
    let mut y_nets = Vec::with_capacity(big_n);
    let mut z_nets = Vec::with_capacity(big_n);
    for n in 0..big_n {
        y_nets.push(Mlp::init(&y_dims, derive_seed(config.seed, &[tags::Y_INIT, n as u64]))?);
        z_nets.push(Mlp::init(&z_dims, derive_seed(config.seed, &[tags::Z_INIT, n as u64]))?);
    }
    let mut losses = vec![Vec::new(); big_n];

    let frozen = match config.path_mode {
        PathMode::Frozen => Some(problem.simulate(&grid, m_paths, derive_seed(config.seed, &[tags::TRAIN_PATHS]))?),
        PathMode::FreshPerEpoch => None,
    };
    // Yhat_m per path, layout [(j * N + m) * dy + c]
    let mut future = vec![0.0; m_paths * big_n * dy];

    for n in (0..big_n).rev() {
        if config.warm_start && n + 1 < big_n {
            y_nets[n] = y_nets[n + 1].clone();
            z_nets[n] = z_nets[n + 1].clone();
        }
        let mut y_net = y_nets[n].clone();
        let mut z_net = z_nets[n].clone();
        let mut adam_y = AdamState::new(&y_net, adam);
        let mut adam_z = AdamState::new(&z_net, adam);
        let mut curve = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            let fresh;
            let paths = match &frozen {
                Some(p) => p,
                None => {
                    fresh = problem.simulate(&grid, m_paths, derive_seed(config.seed, &[tags::TRAIN_PATHS, n as u64, epoch as u64]))?;
                    if uses_y {
                        for m in n + 1..big_n {
                            fill_values(&y_nets[m], &grid, m, &fresh, barrier, config.chunk_rows, &mut future);
                        }
                    }
                    &fresh
                }
            };
            let step = Step {
                problem,
                paths,
                grid: &grid,
                n,
                z_time: config.z_time,
                future: &future,
                y_net: &y_net,
                z_net: &z_net,
                barrier: if project_current { barrier } else { None },
                chunk_rows: config.chunk_rows,
            };
            let (loss, gy, gz) = step.loss_and_gradients();
            let mut finite = loss.is_finite();
            if finite {
                curve.push(loss);
                for (state, net, g) in [(&mut adam_y, &mut y_net, &gy), (&mut adam_z, &mut z_net, &gz)] {
                    match state.step(net, g) {
                        Ok(()) => {}
                        Err(NnError::NonFiniteGradient { .. }) => finite = false,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            if !finite {
                let partial = partial(&grid, config, problem, &y_nets, &z_nets, &losses, n, &y_net, &z_net, &curve);
                return Err(SolverError::Divergence { step: n, epoch, partial: Box::new(partial) });
            }
        }
        log::debug!("step {n}: final loss {:?}", curve.last());
        if let Some(p) = &frozen {
            if uses_y {
                fill_values(&y_net, &grid, n, p, barrier, config.chunk_rows, &mut future);
            }
        }
        y_nets[n] = y_net;
        z_nets[n] = z_net;
        losses[n] = curve;
    }

    Ok(TrainedSolution {
        grid,
        config: config.clone(),
        state_dim: ns,
        value_dim: dy,
        noise_dim: problem.noise_dim,
        y_nets,
        z_nets,
        losses,
    })
}

#[allow(clippy::too_many_arguments)]
fn partial(
    grid: &TimeGrid,
    config: &SolverConfig,
    problem: &BsvieProblem,
    y_nets: &[Mlp],
    z_nets: &[Mlp],
    losses: &[Vec<f64>],
    n: usize,
    y_net: &Mlp,
    z_net: &Mlp,
    curve: &[f64],
) -> TrainedSolution {
    let mut y_nets = y_nets.to_vec();
    let mut z_nets = z_nets.to_vec();
    let mut losses = losses.to_vec();
    y_nets[n] = y_net.clone();
    z_nets[n] = z_net.clone();
    losses[n] = curve.to_vec();
    TrainedSolution {
        grid: *grid,
        config: config.clone(),
        state_dim: problem.state_dim,
        value_dim: problem.value_dim,
        noise_dim: problem.noise_dim,
        y_nets,
        z_nets,
        losses,
    }
}

/// Evaluates `net` (the step-`m` `Y` network) on every path and writes the
/// projected values into `out[(j * N + m) * dy..]`.
fn fill_values(net: &Mlp, grid: &TimeGrid, m: usize, paths: &PathBatch, barrier: Option<&dyn Barrier>, chunk_rows: usize, out: &mut [f64]) {
    let big_n = grid.n_steps();
    let dy = net.output_dim();
    let ns = paths.state_dim();
    let t = grid.time(m);
    let per = chunk_rows.max(1);
    out.par_chunks_mut(per * big_n * dy).enumerate().for_each_init(ForwardCache::default, |cache, (c, block)| {
        let j0 = c * per;
        let rows = block.len() / (big_n * dy);
        let input = cache.input_mut(1 + ns, rows);
        for p in 0..rows {
            input.set(p, 0, t);
            for (i, &x) in paths.state(j0 + p, m).iter().enumerate() {
                input.set(p, 1 + i, x);
            }
        }
        net.forward_cached(cache);
        let y = cache.output();
        for p in 0..rows {
            let floor = barrier.map(|b| b.value(t, paths.state(j0 + p, m)));
            for c in 0..dy {
                let v = y.get(p, c);
                block[(p * big_n + m) * dy + c] = floor.map_or(v, |l| v.max(l));
            }
        }
    });
}

/// One epoch's fused loss and gradient evaluation at step `n`.
pub(crate) struct Step<'a> {
    pub(crate) problem: &'a BsvieProblem,
    pub(crate) paths: &'a PathBatch,
    pub(crate) grid: &'a TimeGrid,
    pub(crate) n: usize,
    pub(crate) z_time: ZTimeConvention,
    pub(crate) future: &'a [f64],
    pub(crate) y_net: &'a Mlp,
    pub(crate) z_net: &'a Mlp,
    /// Set when the current value inside `f` is projected.
    pub(crate) barrier: Option<&'a dyn Barrier>,
    pub(crate) chunk_rows: usize,
}

#[derive(Default)]
struct Workspace {
    y_cache: ForwardCache,
    z_cache: ForwardCache,
    y_grad: Batch,
    z_grad: Batch,
}

impl Step<'_> {
    pub(crate) fn loss_and_gradients(&self) -> (f64, Gradients, Gradients) {
        let m_paths = self.paths.n_paths();
        let width = self.grid.n_steps() - self.n;
        let per = (self.chunk_rows / width).max(1);
        let starts: Vec<usize> = (0..m_paths).step_by(per).collect();
        let parts: Vec<(f64, Gradients, Gradients)> = starts
            .par_iter()
            .map_init(Workspace::default, |ws, &j0| self.chunk(ws, j0, (j0 + per).min(m_paths)))
            .collect();
        let mut gy = Gradients::zeros_like(self.y_net);
        let mut gz = Gradients::zeros_like(self.z_net);
        let mut loss = 0.0;
        for (l, a, b) in &parts {
            loss += l;
            gy.add_assign(a);
            gz.add_assign(b);
        }
        (loss / m_paths as f64, gy, gz)
    }

    fn chunk(&self, ws: &mut Workspace, j0: usize, j1: usize) -> (f64, Gradients, Gradients) {
        let problem = self.problem;
        let (grid, paths, n) = (self.grid, self.paths, self.n);
        let big_n = grid.n_steps();
        let width = big_n - n;
        let (ns, dy, dz, d) = (problem.state_dim, problem.value_dim, problem.z_dim(), problem.noise_dim);
        let p_len = j1 - j0;
        let rows = p_len * width;
        let dt = grid.dt();
        let t_n = grid.time(n);
        let inv_m = 1.0 / paths.n_paths() as f64;
        let shift = usize::from(self.z_time == ZTimeConvention::Right);

        let input = ws.y_cache.input_mut(1 + ns, p_len);
        for p in 0..p_len {
            input.set(p, 0, t_n);
            for (i, &x) in paths.state(j0 + p, n).iter().enumerate() {
                input.set(p, 1 + i, x);
            }
        }
        self.y_net.forward_cached(&mut ws.y_cache);

        let input = ws.z_cache.input_mut(2 + 2 * ns, rows);
        for p in 0..p_len {
            let x_n = paths.state(j0 + p, n);
            for m in n..big_n {
                let r = p * width + (m - n);
                input.set(r, 0, t_n);
                input.set(r, 1, grid.time(m + shift));
                for i in 0..ns {
                    input.set(r, 2 + i, x_n[i]);
                    input.set(r, 2 + ns + i, paths.state(j0 + p, m)[i]);
                }
            }
        }
        self.z_net.forward_cached(&mut ws.z_cache);

        let y_out = ws.y_cache.output();
        let z_out = ws.z_cache.output();
        ws.y_grad = Batch::zeros(dy, p_len);
        ws.z_grad = Batch::zeros(dz, rows);

        let mut g = vec![0.0; dy];
        let mut f = vec![0.0; dy];
        let mut y_raw = vec![0.0; dy];
        let mut y_used = vec![0.0; dy];
        let mut mask = vec![1.0; dy];
        let mut z = vec![0.0; dz];
        let mut cot = vec![0.0; dy];
        let mut vy = vec![0.0; dy];
        let mut vz = vec![0.0; dz];
        let mut loss = 0.0;

        for p in 0..p_len {
            let j = j0 + p;
            let x_n = paths.state(j, n);
            problem.terminal.eval(t_n, x_n, paths.state(j, big_n), &mut g);
            let floor = self.barrier.map(|b| b.value(t_n, x_n));
            for c in 0..dy {
                y_raw[c] = y_out.get(p, c);
                match floor {
                    Some(l) => {
                        y_used[c] = y_raw[c].max(l);
                        mask[c] = if y_raw[c] >= l { 1.0 } else { 0.0 };
                    }
                    None => y_used[c] = y_raw[c],
                }
            }
            let y_at = |m: usize| -> &[f64] {
                if m == n {
                    &y_used
                } else {
                    &self.future[(j * big_n + m) * dy..(j * big_n + m + 1) * dy]
                }
            };

            for m in n..big_n {
                let r = p * width + (m - n);
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc = z_out.get(r, c);
                }
                let args = GenArgs { t: t_n, s: grid.time(m), x_t: x_n, x_s: paths.state(j, m), y: y_at(m), z: &z };
                problem.generator.eval(&args, &mut f);
                let db = paths.increment(j, m);
                for i in 0..dy {
                    let mut stoch = 0.0;
                    for c in 0..d {
                        stoch += z[i * d + c] * db[c];
                    }
                    g[i] += f[i] * dt - stoch;
                }
            }

            for c in 0..dy {
                let diff = y_raw[c] - g[c];
                loss += diff * diff;
                cot[c] = 2.0 * diff * inv_m;
            }

            // dl/dG = -cot; G carries +f dt - z dB
            vy.fill(0.0);
            for m in n..big_n {
                let r = p * width + (m - n);
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc = z_out.get(r, c);
                }
                let args = GenArgs { t: t_n, s: grid.time(m), x_t: x_n, x_s: paths.state(j, m), y: y_at(m), z: &z };
                vz.fill(0.0);
                if m == n {
                    problem.generator.vjp(&args, &cot, &mut vy, &mut vz);
                } else {
                    let mut sink = [0.0; 4];
                    if dy <= sink.len() {
                        problem.generator.vjp(&args, &cot, &mut sink[..dy], &mut vz);
                    } else {
                        problem.generator.vjp(&args, &cot, &mut vec![0.0; dy], &mut vz);
                    }
                }
                let db = paths.increment(j, m);
                for i in 0..dy {
                    for c in 0..d {
                        let q = i * d + c;
                        ws.z_grad.set(r, q, cot[i] * db[c] - dt * vz[q]);
                    }
                }
            }
            for c in 0..dy {
                ws.y_grad.set(p, c, cot[c] - dt * mask[c] * vy[c]);
            }
        }

        let mut gy = Gradients::zeros_like(self.y_net);
        let mut gz = Gradients::zeros_like(self.z_net);
        let y_grad = std::mem::take(&mut ws.y_grad);
        let z_grad = std::mem::take(&mut ws.z_grad);
        self.y_net.backward_cached(&mut ws.y_cache, &y_grad, &mut gy);
        self.z_net.backward_cached(&mut ws.z_cache, &z_grad, &mut gz);
        ws.y_grad = y_grad;
        ws.z_grad = z_grad;
        (loss, gy, gz)
    }
}

/// Raw network outputs on `paths`: `Yhat_n` for `n < N` and `Zhat(t_n, t_k)`
/// for `n <= k < N`.
pub fn evaluate_raw(solution: &TrainedSolution, paths: &PathBatch) -> Result<SolutionValues, SolverError> {
    let grid = solution.grid;
    if paths.grid() != &grid {
        return Err(SolverError::Contract("evaluation paths live on a different grid".into()));
    }
    if paths.state_dim() != solution.state_dim || paths.noise_dim() != solution.noise_dim {
        return Err(SolverError::Contract("evaluation paths have the wrong dimensions".into()));
    }
    let big_n = grid.n_steps();
    let (ns, dy) = (solution.state_dim, solution.value_dim);
    let dz = dy * solution.noise_dim;
    let tri = triangle_len(big_n);
    let m_paths = paths.n_paths();
    let mut out = SolutionValues::zeros(m_paths, big_n, dy, dz);
    let per = (solution.config.chunk_rows / big_n).max(1);

    out.y
        .par_chunks_mut(per * big_n * dy)
        .zip(out.z.par_chunks_mut(per * tri * dz))
        .enumerate()
        .for_each_init(ForwardCache::default, |cache, (c, (y_block, z_block))| {
            let j0 = c * per;
            let p_len = y_block.len() / (big_n * dy);
            for n in 0..big_n {
                let t_n = grid.time(n);
                let input = cache.input_mut(1 + ns, p_len);
                for p in 0..p_len {
                    input.set(p, 0, t_n);
                    for (i, &x) in paths.state(j0 + p, n).iter().enumerate() {
                        input.set(p, 1 + i, x);
                    }
                }
                solution.y_nets[n].forward_cached(cache);
                for p in 0..p_len {
                    for c in 0..dy {
                        y_block[(p * big_n + n) * dy + c] = cache.output().get(p, c);
                    }
                }

                let width = big_n - n;
                let input = cache.input_mut(2 + 2 * ns, p_len * width);
                for p in 0..p_len {
                    for k in n..big_n {
                        let r = p * width + (k - n);
                        input.set(r, 0, t_n);
                        input.set(r, 1, grid.time(k));
                        for i in 0..ns {
                            input.set(r, 2 + i, paths.state(j0 + p, n)[i]);
                            input.set(r, 2 + ns + i, paths.state(j0 + p, k)[i]);
                        }
                    }
                }
                solution.z_nets[n].forward_cached(cache);
                for p in 0..p_len {
                    for k in n..big_n {
                        let r = p * width + (k - n);
                        let o = (p * tri + triangle_index(big_n, n, k)) * dz;
                        for c in 0..dz {
                            z_block[o + c] = cache.output().get(r, c);
                        }
                    }
                }
            }
        });
    Ok(out)
}
