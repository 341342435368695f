//! Dual coordinate ascent for
//! `min_F sum_i w_i sum_p phi_p(<W_{a_i}, F(x_i)>) + (tau / 2) ||F - C||^2`
//! over the augmented reproducing space with kernel `K + 1`.
//!
//! Each sample carries one dual variable per loss piece. At a dual point
//! the primal function is `F = C - (1 / tau) sum_i w_i s_i K~(x_i, .) W_{a_i}`
//! with `s_i = sum_p scale_p a_ip`. Functions are kept either through an
//! explicit feature map (linear and low-degree polynomial kernels) or
//! through the gram matrix.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::TrialDataset;
use crate::kernel::{symmetric_gram, FunctionClass, KernelSpec, MAX_FEATURE_DIM};
use crate::loss::Piece;
use crate::simplex::make_simplex;

pub(crate) enum Backend {
    /// Rows `(phi(x_i), 1)`, row-major `n x dim`.
    Features { dim: usize, phi: Vec<f64> },
    /// Augmented gram `K + 1`, row-major `n x n`.
    Gram { q: Vec<f64> },
}

/// Training data laid out for the solvers.
pub(crate) struct Design {
    pub n: usize,
    pub m: usize,
    pub treatments: Vec<usize>,
    pub weights: Vec<f64>,
    /// Vertices, row-major `k x m`.
    vertices: Vec<f64>,
    /// `<W_a, W_b>`, row-major `k x k`.
    wdot: Vec<f64>,
    k: usize,
    /// `K~(x_i, x_i)`.
    diag: Vec<f64>,
    pub backend: Backend,
}

impl Design {
    pub fn new(ds: &TrialDataset, class: &FunctionClass) -> Self {
        let n = ds.n();
        let k = ds.k();
        let m = k - 1;
        let simplex = make_simplex(k).expect("dataset guarantees k >= 2");
        let vertices: Vec<f64> = simplex.vertices().iter().flat_map(|v| v.iter().copied()).collect();
        let wdot: Vec<f64> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .map(|(a, b)| simplex.inner(a, b))
            .collect();
        let x = ds.features();
        let map = match class {
            FunctionClass::Linear => KernelSpec::Linear.build().feature_map(ds.p()),
            FunctionClass::Kernel(spec) => spec
                .build()
                .feature_map(ds.p())
                .filter(|fm| fm.dim() < MAX_FEATURE_DIM && fm.dim() < n),
        };
        let backend = match map {
            Some(fm) => {
                let dim = fm.dim() + 1;
                let mut phi = vec![0.0; n * dim];
                phi.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
                    fm.map_into(x.row(i), &mut row[..dim - 1]);
                    row[dim - 1] = 1.0;
                });
                Backend::Features { dim, phi }
            }
            None => {
                let spec = match class {
                    FunctionClass::Kernel(spec) => *spec,
                    FunctionClass::Linear => unreachable!("linear class always has a feature map"),
                };
                let g = symmetric_gram(spec.build().as_ref(), x);
                let mut q = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        q[i * n + j] = g[(i, j)] + 1.0;
                    }
                }
                Backend::Gram { q }
            }
        };
        let diag = match &backend {
            Backend::Features { dim, phi } => phi
                .chunks(*dim)
                .map(|r| r.iter().map(|v| v * v).sum())
                .collect(),
            Backend::Gram { q } => (0..n).map(|i| q[i * n + i]).collect(),
        };
        Self {
            n,
            m,
            treatments: ds.treatments().to_vec(),
            weights: ds.weights(),
            vertices,
            wdot,
            k,
            diag,
            backend,
        }
    }

    pub fn vertex(&self, a: usize) -> &[f64] {
        &self.vertices[a * self.m..(a + 1) * self.m]
    }

    fn wdot(&self, a: usize, b: usize) -> f64 {
        self.wdot[a * self.k + b]
    }

    /// Number of free coefficients, used to scale tolerances.
    pub fn coefficient_dim(&self) -> usize {
        match &self.backend {
            Backend::Features { dim, .. } => dim * self.m,
            Backend::Gram { .. } => self.n * self.m,
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        match &self.backend {
            Backend::Features { dim, .. } => Some(*dim),
            Backend::Gram { .. } => None,
        }
    }

    fn phi(&self, i: usize) -> &[f64] {
        match &self.backend {
            Backend::Features { dim, phi } => &phi[i * dim..(i + 1) * dim],
            Backend::Gram { .. } => unreachable!(),
        }
    }

    fn margin_of(&self, vals: &[f64], i: usize) -> f64 {
        let v = &vals[i * self.m..(i + 1) * self.m];
        self.vertex(self.treatments[i]).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// An element of the augmented space, tracked through its expansion
/// coefficients `coef` (`n x m`), its values at the training points
/// `vals` (`n x m`) and, for feature designs, its weights `beta`
/// (`dim x m`). All row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Func {
    pub coef: Vec<f64>,
    pub beta: Vec<f64>,
    pub vals: Vec<f64>,
}

impl Func {
    pub fn zero(d: &Design) -> Self {
        Self {
            coef: vec![0.0; d.n * d.m],
            beta: vec![0.0; d.feature_dim().unwrap_or(0) * d.m],
            vals: vec![0.0; d.n * d.m],
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Func, b: f64) -> Func {
        let lin = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect();
        Func {
            coef: lin(&self.coef, &other.coef),
            beta: lin(&self.beta, &other.beta),
            vals: lin(&self.vals, &other.vals),
        }
    }

    pub fn norm_sq(&self, d: &Design) -> f64 {
        match d.backend {
            Backend::Features { .. } => self.beta.iter().map(|v| v * v).sum(),
            Backend::Gram { .. } => self.coef.iter().zip(&self.vals).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn margins(&self, d: &Design) -> Vec<f64> {
        (0..d.n).map(|i| d.margin_of(&self.vals, i)).collect()
    }

    /// Recomputes `vals` from `beta` (features) or `coef` (gram).
    fn refresh_vals(&mut self, d: &Design) {
        let m = d.m;
        match &d.backend {
            Backend::Features { dim, phi } => {
                let beta = &self.beta;
                self.vals.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
                    let row = &phi[i * dim..(i + 1) * dim];
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = row.iter().enumerate().map(|(t, x)| x * beta[t * m + j]).sum();
                    }
                });
            }
            Backend::Gram { q } => {
                let n = d.n;
                let coef = &self.coef;
                self.vals.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
                    let row = &q[i * n..(i + 1) * n];
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = row.iter().enumerate().map(|(l, x)| x * coef[l * m + j]).sum();
                    }
                });
            }
        }
    }
}

pub(crate) struct Block<'a> {
    pub design: &'a Design,
    pub pieces: &'a [Piece],
    pub tau: f64,
    pub anchor: &'a Func,
}

pub(crate) struct BlockSolution {
    pub f: Func,
    /// Dual variables, piece-major: `duals[p * n + i]`.
    pub duals: Vec<f64>,
    pub sweeps: usize,
    pub kkt: f64,
    pub gap: f64,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
}

/// Running state of the ascent.
struct State<'a> {
    blk: &'a Block<'a>,
    duals: Vec<f64>,
    /// Current weights (features) or margins (gram).
    beta: Vec<f64>,
    u: Vec<f64>,
    anchor_u: Vec<f64>,
    /// Coordinates `(piece, sample)` in visiting order, reshuffled each sweep.
    order: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl<'a> State<'a> {
    fn new(blk: &'a Block<'a>, warm: Option<Vec<f64>>) -> Self {
        let d = blk.design;
        let np = blk.pieces.len();
        let mut duals = warm
            .filter(|w| w.len() == np * d.n)
            .unwrap_or_else(|| vec![0.0; np * d.n]);
        for i in 0..d.n {
            if d.weights[i] <= 0.0 {
                for p in 0..np {
                    duals[p * d.n + i] = 0.0;
                }
            }
        }
        let anchor_u = blk.anchor.margins(d);
        let order = (0..d.n)
            .filter(|&i| d.weights[i] > 0.0)
            .flat_map(|i| (0..np).map(move |p| (p, i)))
            .collect();
        let mut st = Self {
            blk,
            duals,
            beta: Vec::new(),
            u: Vec::new(),
            anchor_u,
            order,
            rng: ChaCha8Rng::seed_from_u64(0x0c0f_fee5),
        };
        st.rebuild();
        st
    }

    fn slope(&self, i: usize) -> f64 {
        let n = self.blk.design.n;
        self.blk
            .pieces
            .iter()
            .enumerate()
            .map(|(p, pc)| pc.scale() * self.duals[p * n + i])
            .sum()
    }

    /// Expansion coefficient row of sample `i` relative to the anchor.
    fn coef_row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let d = self.blk.design;
        let c = -d.weights[i] * self.slope(i) / self.blk.tau;
        d.vertex(d.treatments[i]).iter().map(move |w| c * w)
    }

    /// Recomputes the primal state from the duals.
    fn rebuild(&mut self) {
        let f = self.function();
        let d = self.blk.design;
        match d.backend {
            Backend::Features { .. } => {
                self.u = f.margins(d);
                self.beta = f.beta;
            }
            Backend::Gram { .. } => self.u = f.margins(d),
        }
    }

    fn function(&self) -> Func {
        let d = self.blk.design;
        let mut f = self.blk.anchor.clone();
        for i in 0..d.n {
            let row: Vec<f64> = self.coef_row(i).collect();
            for (j, c) in row.iter().enumerate() {
                f.coef[i * d.m + j] += c;
            }
            if let Backend::Features { dim, .. } = d.backend {
                let phi = d.phi(i);
                for t in 0..dim {
                    for (j, c) in row.iter().enumerate() {
                        f.beta[t * d.m + j] += phi[t] * c;
                    }
                }
            }
        }
        f.refresh_vals(d);
        f
    }

    fn margin(&self, i: usize) -> f64 {
        let d = self.blk.design;
        match d.backend {
            Backend::Features { dim, .. } => {
                let phi = d.phi(i);
                let w = d.vertex(d.treatments[i]);
                let mut s = 0.0;
                for t in 0..dim {
                    let b = &self.beta[t * d.m..(t + 1) * d.m];
                    s += phi[t] * b.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
                }
                s
            }
            Backend::Gram { .. } => self.u[i],
        }
    }

    /// Applies a slope change `ds` on sample `i`.
    fn apply(&mut self, i: usize, ds: f64) {
        let d = self.blk.design;
        let c = -d.weights[i] * ds / self.blk.tau;
        let ai = d.treatments[i];
        match &d.backend {
            Backend::Features { dim, .. } => {
                let phi = d.phi(i);
                let w = d.vertex(ai);
                for t in 0..*dim {
                    let f = c * phi[t];
                    for (j, wj) in w.iter().enumerate() {
                        self.beta[t * d.m + j] += f * wj;
                    }
                }
            }
            Backend::Gram { q } => {
                let row = &q[i * d.n..(i + 1) * d.n];
                for (l, u) in self.u.iter_mut().enumerate() {
                    *u += c * row[l] * d.wdot(d.treatments[l], ai);
                }
            }
        }
    }

    fn refresh_margins(&mut self) {
        let d = self.blk.design;
        if let Backend::Features { .. } = d.backend {
            self.u = (0..d.n).map(|i| self.margin(i)).collect();
        }
    }

    /// `(kkt, gap, primal, dual)` at the current margins.
    fn certificates(&self) -> (f64, f64, f64, f64) {
        let d = self.blk.design;
        let mut kkt: f64 = 0.0;
        let mut gap = 0.0;
        let mut loss = 0.0;
        let mut conj = 0.0;
        let mut dist = 0.0;
        for i in 0..d.n {
            let w = d.weights[i];
            if w <= 0.0 {
                continue;
            }
            let u = self.u[i];
            for (p, pc) in self.blk.pieces.iter().enumerate() {
                let a = self.duals[p * d.n + i];
                kkt = kkt.max(pc.projected_gradient(a, u).abs());
                gap += w * pc.gap(a, u);
                loss += w * pc.value(u);
                conj += w * pc.conjugate(a);
            }
            dist -= w * self.slope(i) * (u - self.anchor_u[i]) / self.blk.tau;
        }
        let dist = dist.max(0.0);
        let sc: f64 = (0..d.n)
            .map(|i| d.weights[i] * self.slope(i) * self.anchor_u[i])
            .sum();
        let primal = loss + 0.5 * self.blk.tau * dist;
        let dual = -conj + sc - 0.5 * self.blk.tau * dist;
        (kkt, gap, primal, dual)
    }

    /// One pass over pieces then samples. Returns the largest single
    /// coordinate improvement of the dual.
    fn sweep(&mut self, mut trace: Option<&mut Vec<f64>>) -> f64 {
        let d = self.blk.design;
        let mut best: f64 = 0.0;
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        for &(p, i) in &order {
            let pc = &self.blk.pieces[p];
            let scale = pc.scale();
            let w = d.weights[i];
            let u = self.margin(i);
            let a = self.duals[p * d.n + i];
            let ai = d.treatments[i];
            let h = w * d.diag[i] * d.wdot(ai, ai) / self.blk.tau;
            let next = pc.coordinate_step(a, u, h);
            if next != a {
                let step = next - a;
                let gain = w
                    * (pc.conjugate(a) - pc.conjugate(next) + scale * step * u - 0.5 * scale * scale * h * step * step);
                best = best.max(gain);
                self.duals[p * d.n + i] = next;
                self.apply(i, scale * step);
            }
            if let Some(t) = trace.as_deref_mut() {
                self.refresh_margins();
                t.push(self.certificates().3);
            }
        }
        self.order = order;
        best
    }
}

/// Runs randomly permuted dual coordinate ascent until every projected dual gradient
/// is below `tol` or `max_sweeps` passes have been made. `trace`, when given, receives the dual value
/// after every coordinate visit.
pub(crate) fn solve_block(
    blk: &Block<'_>,
    warm: Option<Vec<f64>>,
    tol: f64,
    max_sweeps: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> BlockSolution {
    let mut st = State::new(blk, warm);
    let mut sweeps = 0;
    let mut converged = false;
    if let Some(t) = trace.as_deref_mut() {
        t.push(st.certificates().3);
    }
    let check = |st: &State<'_>| {
        st.certificates().0 < tol
    };
    while sweeps < max_sweeps {
        if check(&st) {
            // confirm on freshly recomputed margins
            st.rebuild();
            if check(&st) {
                converged = true;
                break;
            }
        }
        st.sweep(trace.as_deref_mut());
        sweeps += 1;
        st.refresh_margins();
        if matches!(blk.design.backend, Backend::Gram { .. }) && sweeps % 50 == 0 {
            st.rebuild();
        }
    }
    if !converged {
        st.rebuild();
        converged = check(&st);
    }
    let f = st.function();
    let (kkt, gap, primal, dual) = st.certificates();
    BlockSolution {
        f,
        duals: st.duals,
        sweeps,
        kkt,
        gap,
        primal,
        dual,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;
    use crate::loss::{BentHingeLoss, SurrogateLoss};

    fn trial() -> TrialDataset {
        let x: Vec<f64> = (0..24).map(|v| ((v * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let a = (0..12).map(|i| i % 3).collect();
        let y = (0..12).map(|i| 1.0 + (i % 4) as f64 / 2.0).collect();
        TrialDataset::new(Covariates::new(12, 2, x).unwrap(), a, y, vec![1.0 / 3.0; 12], 3).unwrap()
    }

    #[test]
    fn gap_closes_and_certificates_are_consistent() {
        let ds = trial();
        let pieces = BentHingeLoss::new(1.5).unwrap().pieces();
        for class in [FunctionClass::Linear, FunctionClass::Kernel(KernelSpec::gaussian(1.0).unwrap())] {
            let d = Design::new(&ds, &class);
            let zero = Func::zero(&d);
            let blk = Block { design: &d, pieces: &pieces, tau: 2.4, anchor: &zero };
            let sol = solve_block(&blk, None, 1e-10, 10_000, None);
            assert!(sol.converged);
            assert!((sol.primal - sol.dual - sol.gap).abs() < 1e-9 * sol.primal);
            assert!(sol.gap < 1e-7 * sol.primal);
        }
    }

    #[test]
    fn zero_anchor_is_optimal_for_the_bent_piece_alone() {
        // u_+ has a zero subgradient at u = 0, so f = 0 solves the block
        let ds = trial();
        let d = Design::new(&ds, &FunctionClass::Linear);
        let anchor = Func::zero(&d);
        let pieces = [Piece::PositivePart { slope: 0.5 }];
        let blk = Block { design: &d, pieces: &pieces, tau: 1.0, anchor: &anchor };
        let sol = solve_block(&blk, None, 1e-12, 100, None);
        assert!(sol.converged);
        assert_eq!(sol.f, anchor);
    }
}
