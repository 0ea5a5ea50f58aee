//! Context reasoning: graph convolution over the fused region graph with a
//! residual update of the input features.
//!
//! Each layer computes `H_l = LeakyReLU(L_hat H_{l-1} W_l)` where
//! `L_hat = D^{-1/2} (D - E) D^{-1/2}` is the normalized combinatorial
//! Laplacian of the graph, and the output is `f + H_L`. Nodes of degree
//! zero get an all-zero Laplacian row and column, so they pass their input
//! through the residual unchanged.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::graph::Adjacency;
use crate::init::{all_finite, fan_uniform, leaky_relu, leaky_relu_grad};

pub const DEFAULT_LAYERS: usize = 2;

/// Sparse normalized Laplacian. The diagonal is stored densely, off-diagonal
/// entries in CSR form. Edge weights are kept so that gradients with respect
/// to them can be formed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Edge weight per stored off-diagonal entry.
    weights: Vec<f64>,
    degrees: Vec<f64>,
}

impl NormalizedLaplacian {
    /// Laplacian of a binary graph.
    pub fn new(adj: &Adjacency) -> Self {
        Self::weighted(adj, &vec![1.0; adj.num_edges()]).expect("unit weights are valid")
    }

    /// Laplacian of a weighted graph; `edge_weights` follows `adj.edges()`
    /// and must be strictly positive.
    pub fn weighted(adj: &Adjacency, edge_weights: &[f64]) -> Result<Self> {
        check_dim("edge weights", adj.num_edges(), edge_weights.len())?;
        if edge_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("edge weights must be positive and finite".into()));
        }
        let n = adj.num_nodes();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut degrees = vec![0.0; n];
        for (&(i, j), &w) in adj.edges().iter().zip(edge_weights) {
            rows[i].push((j, w));
            rows[j].push((i, w));
            degrees[i] += w;
            degrees[j] += w;
        }
        let inv_sqrt: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let diag = degrees.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(adj.nnz());
        let mut vals = Vec::with_capacity(adj.nnz());
        let mut weights = Vec::with_capacity(adj.nnz());
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            for (j, w) in row {
                cols.push(j);
                vals.push(-w * inv_sqrt[i] * inv_sqrt[j]);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
            weights,
            degrees,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            m[[i, i]] = self.diag[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[[i, self.cols[k]]] = self.vals[k];
            }
        }
        m
    }

    /// `L_hat x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = x.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.n * d];
        for i in 0..self.n {
            let dst = &mut out[i * d..(i + 1) * d];
            let di = self.diag[i];
            if di != 0.0 {
                for (o, &v) in dst.iter_mut().zip(&xs[i * d..(i + 1) * d]) {
                    *o = di * v;
                }
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let a = self.vals[k];
                for (o, &v) in dst.iter_mut().zip(&xs[j * d..(j + 1) * d]) {
                    *o += a * v;
                }
            }
        }
        Array2::from_shape_vec((self.n, d), out).expect("shape matches buffer")
    }

    /// Gradient with respect to every undirected edge weight, aligned with
    /// `adj.edges()` of the graph this Laplacian was built from, given the
    /// gradient of the loss with respect to the stored off-diagonal values.
    fn edge_weight_grads(&self, adj: &Adjacency, d_vals: &[f64]) -> Vec<f64> {
        // n_ij = w_ij d_i^{-1/2} d_j^{-1/2}, L_ij = -n_ij for i != j.
        // Treat the two directed copies of every weight as separate inputs:
        //   dL/dw_ij(directed) = dN_ij / sqrt(d_i d_j) + dL/dd_i
        //   dL/dd_i = -1/(2 d_i) sum_m (dN_im n_im + dN_mi n_mi)
        let n = self.n;
        let mut g_deg = vec![0.0; n];
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let dn = -d_vals[k];
                let nij = -self.vals[k];
                let t = dn * nij;
                g_deg[i] -= 0.5 * t / self.degrees[i];
                g_deg[j] -= 0.5 * t / self.degrees[j];
            }
        }
        let mut directed = std::collections::HashMap::with_capacity(self.cols.len());
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let dn = -d_vals[k];
                let g = dn / (self.degrees[i] * self.degrees[j]).sqrt() + g_deg[i];
                directed.insert((i, j), g);
            }
        }
        adj.edges()
            .iter()
            .map(|&(i, j)| directed[&(i, j)] + directed[&(j, i)])
            .collect()
    }
}

/// Dense `D - E`.
pub fn combinatorial_laplacian(adj: &Adjacency) -> Array2<f64> {
    let mut m = adj.to_dense().mapv(|v| -v);
    for (i, d) in adj.degrees().into_iter().enumerate() {
        m[[i, i]] = d as f64;
    }
    m
}

/// Dense `D^{-1/2} (D - E) D^{-1/2}` with the degree-zero convention.
pub fn normalized_laplacian(adj: &Adjacency) -> Array2<f64> {
    NormalizedLaplacian::new(adj).to_dense()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// Square `D x D` weights, one per layer.
    pub weights: Vec<Array2<f64>>,
    pub slope: f64,
}

impl GcnParams {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, layers: usize, slope: f64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig("gcn needs at least one layer".into()));
        }
        let weights = (0..layers).map(|_| fan_uniform(rng, dim, dim)).collect();
        Ok(Self { weights, slope })
    }

    pub fn zeros(dim: usize, layers: usize, slope: f64) -> Self {
        Self {
            weights: vec![Array2::zeros((dim, dim)); layers],
            slope,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvalidConfig("gcn needs at least one layer".into()));
        }
        let d = self.dim();
        for w in &self.weights {
            check_dim("gcn weight rows", d, w.nrows())?;
            check_dim("gcn weight cols", d, w.ncols())?;
        }
        Ok(())
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct GcnTape {
    lap: NormalizedLaplacian,
    weights: Vec<Array2<f64>>,
    slope: f64,
    /// `H_0 .. H_L`.
    hidden: Vec<Array2<f64>>,
    /// `L_hat H_{l-1}` per layer.
    propagated: Vec<Array2<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Array2<f64>>,
}

impl GcnTape {
    pub fn laplacian(&self) -> &NormalizedLaplacian {
        &self.lap
    }

    /// `H_0 .. H_L`; `H_0` is the input.
    pub fn hidden(&self) -> &[Array2<f64>] {
        &self.hidden
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone)]
pub struct GcnGrads {
    pub features: Array2<f64>,
    pub weights: Vec<Array2<f64>>,
}

/// Runs the layers and returns `f + H_L` together with the tape.
pub fn gcn_forward(f: &Array2<f64>, adj: &Adjacency, params: &GcnParams) -> Result<(Array2<f64>, GcnTape)> {
    check_dim("features vs graph", adj.num_nodes(), f.nrows())?;
    gcn_forward_with(f, NormalizedLaplacian::new(adj), params)
}

pub fn gcn_forward_with(
    f: &Array2<f64>,
    lap: NormalizedLaplacian,
    params: &GcnParams,
) -> Result<(Array2<f64>, GcnTape)> {
    params.validate()?;
    check_dim("features vs laplacian", lap.len(), f.nrows())?;
    check_dim("feature dim vs gcn", params.dim(), f.ncols())?;
    let slope = params.slope;
    let mut hidden = vec![f.clone()];
    let mut propagated = Vec::with_capacity(params.layers());
    let mut pre = Vec::with_capacity(params.layers());
    for w in &params.weights {
        let p = lap.apply(hidden.last().expect("nonempty").view());
        let z = p.dot(w);
        if !all_finite(&z) {
            return Err(Error::NonFinite("gcn hidden features"));
        }
        hidden.push(z.mapv(|v| leaky_relu(v, slope)));
        propagated.push(p);
        pre.push(z);
    }
    let out = f + hidden.last().expect("nonempty");
    Ok((
        out,
        GcnTape {
            lap,
            weights: params.weights.clone(),
            slope,
            hidden,
            propagated,
            pre,
        },
    ))
}

/// Reverse pass for the gradient `grad_out` of the updated features.
pub fn gcn_backward(tape: &GcnTape, grad_out: &Array2<f64>) -> Result<GcnGrads> {
    backward_impl(tape, grad_out, false).map(|(g, _)| g)
}

/// Like [`gcn_backward`], also returning the gradient with respect to the
/// stored off-diagonal Laplacian values.
pub(crate) fn gcn_backward_with_laplacian(
    tape: &GcnTape,
    grad_out: &Array2<f64>,
) -> Result<(GcnGrads, Vec<f64>)> {
    backward_impl(tape, grad_out, true).map(|(g, l)| (g, l.expect("requested")))
}

fn backward_impl(tape: &GcnTape, grad_out: &Array2<f64>, want_lap: bool) -> Result<(GcnGrads, Option<Vec<f64>>)> {
    let f = &tape.hidden[0];
    if grad_out.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "gradient vs tape",
            expected: f.len(),
            got: grad_out.len(),
        });
    }
    let layers = tape.weights.len();
    let lap = &tape.lap;
    let mut d_lap = want_lap.then(|| vec![0.0; lap.vals.len()]);
    let mut weight_grads = vec![Array2::zeros((0, 0)); layers];
    let mut d_h = grad_out.clone();
    for l in (0..layers).rev() {
        let mut d_z = d_h;
        d_z.zip_mut_with(&tape.pre[l], |g, &z| *g *= leaky_relu_grad(z, tape.slope));
        weight_grads[l] = tape.propagated[l].t().dot(&d_z);
        let d_p = d_z.dot(&tape.weights[l].t());
        if let Some(acc) = d_lap.as_mut() {
            // P = L_hat H_{l-1}  =>  dL_hat_ij = <dP_i, H_{l-1,j}>
            let h_prev = &tape.hidden[l];
            for i in 0..lap.n {
                let row = d_p.row(i);
                for k in lap.row_ptr[i]..lap.row_ptr[i + 1] {
                    acc[k] += row.dot(&h_prev.row(lap.cols[k]));
                }
            }
        }
        // L_hat is symmetric.
        d_h = lap.apply(d_p.view());
    }
    let features = grad_out + &d_h;
    Ok((
        GcnGrads {
            features,
            weights: weight_grads,
        },
        d_lap,
    ))
}

/// Gradient with respect to edge weights of a weighted Laplacian.
pub(crate) fn laplacian_edge_grads(tape: &GcnTape, adj: &Adjacency, d_vals: &[f64]) -> Vec<f64> {
    tape.lap.edge_weight_grads(adj, d_vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplacian_examples() {
        let one = Adjacency::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(normalized_laplacian(&one), array![[1.0, -1.0], [-1.0, 1.0]]);

        let iso = Adjacency::from_edges(3, [(0, 1)]).unwrap();
        let l = normalized_laplacian(&iso);
        assert!(l.row(2).iter().chain(l.column(2).iter()).all(|&v| v == 0.0));

        let tri = Adjacency::complete(3);
        let l = normalized_laplacian(&tri);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!((l[[i, j]] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn combinatorial_rows_sum_to_zero() {
        let a = Adjacency::from_edges(5, [(0, 1), (1, 2), (2, 0), (3, 4)]).unwrap();
        let l = combinatorial_laplacian(&a);
        for row in l.rows() {
            assert_eq!(row.sum(), 0.0);
        }
    }

    #[test]
    fn two_node_forward_example() {
        let adj = Adjacency::from_edges(2, [(0, 1)]).unwrap();
        let params = GcnParams {
            weights: vec![Array2::eye(2)],
            slope: 0.01,
        };
        let f = Array2::eye(2);
        let (out, tape) = gcn_forward(&f, &adj, &params).unwrap();
        assert_eq!(tape.hidden()[1], array![[1.0, -0.01], [-0.01, 1.0]]);
        assert_eq!(out, array![[2.0, -0.01], [-0.01, 2.0]]);
    }

    #[test]
    fn empty_graph_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = GcnParams::init(&mut rng, 3, 2, 0.01).unwrap();
        let f = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (out, tape) = gcn_forward(&f, &Adjacency::empty(4), &params).unwrap();
        assert_eq!(out, f);
        let g = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let grads = gcn_backward(&tape, &g).unwrap();
        assert_eq!(grads.features, g);
    }

    #[test]
    fn zero_weights_are_identity() {
        let f = Array2::from_shape_fn((4, 3), |(i, j)| (i + 2 * j) as f64);
        let (out, _) = gcn_forward(&f, &Adjacency::complete(4), &GcnParams::zeros(3, 2, 0.01)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = GcnParams::init(&mut rng, 3, 2, 0.01).unwrap();
        let f = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let (_, tape) = gcn_forward(&f, &Adjacency::complete(5), &params).unwrap();
        let g = gcn_backward(&tape, &Array2::zeros((5, 3))).unwrap();
        assert!(g.features.iter().all(|&v| v == 0.0));
        assert!(g.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_errors() {
        let params = GcnParams::zeros(3, 1, 0.01);
        assert!(gcn_forward(&Array2::zeros((4, 2)), &Adjacency::empty(4), &params).is_err());
        assert!(gcn_forward(&Array2::zeros((3, 3)), &Adjacency::empty(4), &params).is_err());
        let (_, tape) = gcn_forward(&Array2::zeros((4, 3)), &Adjacency::empty(4), &params).unwrap();
        assert!(gcn_backward(&tape, &Array2::zeros((4, 2))).is_err());
    }

    #[test]
    fn exploding_weights_are_reported() {
        let params = GcnParams {
            weights: vec![Array2::from_elem((2, 2), f64::MAX); 2],
            slope: 0.01,
        };
        let f = array![[1.0, 2.0], [3.0, 4.0]];
        let adj = Adjacency::from_edges(2, [(0, 1)]).unwrap();
        assert!(matches!(gcn_forward(&f, &adj, &params), Err(Error::NonFinite(_))));
    }

    #[test]
    fn weighted_laplacian_matches_dense_formula() {
        let adj = Adjacency::from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        let w = [0.3, 0.9, 0.5, 0.7];
        let lap = NormalizedLaplacian::weighted(&adj, &w).unwrap();
        let mut a = Array2::<f64>::zeros((4, 4));
        for (&(i, j), &wt) in adj.edges().iter().zip(&w) {
            a[[i, j]] = wt;
            a[[j, i]] = wt;
        }
        let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        let dense = lap.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { -a[[i, j]] / (d[i] * d[j]).sqrt() };
                assert!((dense[[i, j]] - want).abs() < 1e-15);
            }
        }
        assert!(NormalizedLaplacian::weighted(&adj, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }
}
