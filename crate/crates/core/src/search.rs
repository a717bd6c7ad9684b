//! Bounded Nelder-Mead with seeded restarts.
//!
//! Candidates are projected onto the box before evaluation, so the
//! objective never sees a point outside the bounds. Each restart rebuilds
//! the simplex around the incumbent with a seeded random jitter of size
//! `init_step`. Coefficients adapt to the dimension (Gao and Han), which
//! behaves better than the textbook constants beyond two dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Total objective evaluations across all restarts.
    pub max_evals: usize,
    pub restarts: usize,
    /// Size of the initial simplex edges, in the search coordinates.
    pub init_step: f64,
    /// A run stops once the simplex's loss spread falls below this.
    pub tol_loss: f64,
    /// A run also needs the simplex diameter below this to stop.
    pub tol_params: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            restarts: 4,
            init_step: 0.5,
            tol_loss: 1e-14,
            tol_params: 1e-7,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_evals < 100 {
            return Err(Error::InvalidArgument(format!(
                "max_evals must be at least 100, got {}",
                self.max_evals
            )));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.tol_loss > 0.0) {
            return Err(Error::InvalidArgument("tol_loss must be positive".into()));
        }
        if !(self.init_step > 0.0) {
            return Err(Error::InvalidArgument("init_step must be positive".into()));
        }
        Ok(())
    }
}

/// Closed interval for one search coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// True when `x` sits on (or within `rel` of the width of) either end.
    pub fn is_active(&self, x: f64, rel: f64) -> bool {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return (self.lo.is_finite() && x <= self.lo) || (self.hi.is_finite() && x >= self.hi);
        }
        let tol = rel * (self.hi - self.lo);
        x - self.lo <= tol || self.hi - x <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub evals: usize,
    /// Set when the budget ran out before the last run met its tolerance.
    pub budget_exhausted: bool,
    /// Best loss after each simplex iteration, across all restarts.
    pub trace: Vec<f64>,
}

struct Counter<'a, F> {
    objective: &'a F,
    bounds: &'a [Bound],
    evals: usize,
    best: (f64, Vec<f64>),
}

impl<F: Fn(&[f64]) -> f64> Counter<'_, F> {
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        for (xi, b) in x.iter_mut().zip(self.bounds) {
            *xi = b.clamp(*xi);
        }
        self.evals += 1;
        let mut f = (self.objective)(x);
        if f.is_nan() {
            f = f64::INFINITY;
        }
        if better(f, self.best.0) {
            self.best = (f, x.to_vec());
        }
        f
    }
}

/// Strict improvement only: on ties the earlier point is kept, which makes
/// a flat objective return its starting point.
fn better(f: f64, best_f: f64) -> bool {
    f < best_f
}

/// Minimizes `objective` inside `bounds` starting from `init`.
///
/// Deterministic for a fixed `cfg.seed`. The returned loss is never worse
/// than the loss at `init`.
pub fn minimize<F>(objective: F, init: &[f64], bounds: &[Bound], cfg: &SearchConfig) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if init.is_empty() {
        return Err(Error::InvalidArgument("search needs at least one dimension".into()));
    }
    if bounds.len() != init.len() {
        return Err(Error::LengthMismatch(format!(
            "init has {} coordinates, bounds {}",
            init.len(),
            bounds.len()
        )));
    }
    for (i, (x, b)) in init.iter().zip(bounds).enumerate() {
        if !(b.lo <= b.hi) {
            return Err(Error::InvalidArgument(format!("empty bound for coordinate {i}")));
        }
        if !b.contains(*x) {
            return Err(Error::InvalidArgument(format!(
                "init coordinate {i} = {x} outside [{}, {}]",
                b.lo, b.hi
            )));
        }
    }
    let f0 = objective(init);
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective(f0));
    }

    let mut counter = Counter {
        objective: &objective,
        bounds,
        evals: 1,
        best: (f0, init.to_vec()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = vec![f0];
    let mut exhausted = false;

    for restart in 0..cfg.restarts {
        if counter.evals >= cfg.max_evals {
            exhausted = true;
            break;
        }
        let start = counter.best.1.clone();
        let simplex = initial_simplex(&start, counter.best.0, cfg.init_step, restart, &mut rng, &mut counter);
        let converged = run_simplex(simplex, cfg, &mut counter, &mut trace);
        if !converged {
            exhausted = true;
            break;
        }
    }

    let (loss, params) = counter.best;
    Ok(SearchResult {
        params,
        loss,
        evals: counter.evals,
        budget_exhausted: exhausted,
        trace,
    })
}

fn initial_simplex<F: Fn(&[f64]) -> f64>(
    start: &[f64],
    f_start: f64,
    step: f64,
    restart: usize,
    rng: &mut ChaCha8Rng,
    counter: &mut Counter<'_, F>,
) -> Vec<(Vec<f64>, f64)> {
    let n = start.len();
    let mut simplex = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f_start));
    for i in 0..n {
        let mut x = start.to_vec();
        let delta = if restart == 0 {
            step
        } else {
            step * rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
        };
        let b = counter.bounds[i];
        // step away from a bound that would swallow the move
        let mut target = x[i] + delta;
        if !b.contains(target) {
            target = x[i] - delta;
        }
        x[i] = target;
        if restart > 0 {
            for (j, xj) in x.iter_mut().enumerate() {
                if j != i {
                    *xj += 0.1 * step * rng.gen_range(-1.0..1.0);
                }
            }
        }
        let f = counter.eval(&mut x);
        simplex.push((x, f));
    }
    simplex
}

/// Returns true when the tolerances were met, false when the budget ran out.
fn run_simplex<F: Fn(&[f64]) -> f64>(
    mut simplex: Vec<(Vec<f64>, f64)>,
    cfg: &SearchConfig,
    counter: &mut Counter<'_, F>,
    trace: &mut Vec<f64>,
) -> bool {
    let n = simplex.len() - 1;
    let nf = n as f64;
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / nf;
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;
    let sigma = if n == 1 { 0.5 } else { sigma };
    let rho = if n == 1 { 0.5 } else { rho };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex_cmp(&a.0, &b.0)));
        trace.push(counter.best.0);

        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= cfg.tol_loss && diameter <= cfg.tol_params {
            return true;
        }
        if counter.evals >= cfg.max_evals {
            return false;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / nf)
            .collect();
        let worst = simplex[n].clone();
        let point = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

        let mut xr = point(alpha);
        let fr = counter.eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = point(alpha * gamma);
            let fe = counter.eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, fc_ref) = if fr < worst.1 {
            (point(alpha * rho), fr)
        } else {
            (point(-rho), worst.1)
        };
        let fc = counter.eval(&mut xc);
        if fc <= fc_ref {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + sigma * (v - b)).collect();
            let f = counter.eval(&mut x);
            *vertex = (x, f);
            if counter.evals >= cfg.max_evals {
                break;
            }
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}
