//! Forward pass, loss and analytic gradients.

use ndarray::{s, Array1, Array2, ArrayView1};

use super::params::ScorerParams;
use super::train::TrainingExample;
use super::ScorerError;
use crate::encoder::Embedding;

/// Floor applied to the predicted probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// `[p_irrelevant, p_relevant]`
    pub probs: [f64; 2],
    pub score: f64,
}

/// Numerically stable two-class softmax.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn relu(v: Array1<f64>) -> Array1<f64> {
    v.mapv_into(|x| x.max(0.0))
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), ScorerError> {
    if expected != got {
        return Err(ScorerError::Dimension { what, expected, got });
    }
    Ok(())
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Forward {
    x: Array1<f64>,
    z0: Array1<f64>,
    h: Array1<f64>,
    z1: Array1<f64>,
    a1: Array1<f64>,
    pub(crate) probs: [f64; 2],
}

/// `[center ‖ mean(neighbors)]`, with the zero vector as the mean of nothing.
fn concat_mean(center: &[f64], neighbors: &[&[f64]], d_in: usize) -> Result<Array1<f64>, ScorerError> {
    check("center embedding", d_in, center.len())?;
    let mut x = Array1::zeros(2 * d_in);
    x.slice_mut(s![..d_in]).assign(&ArrayView1::from(center));
    if !neighbors.is_empty() {
        let mut mean = x.slice_mut(s![d_in..]);
        for n in neighbors {
            check("neighbor embedding", d_in, n.len())?;
            mean += &ArrayView1::from(*n);
        }
        mean /= neighbors.len() as f64;
    }
    Ok(x)
}

fn gnn_layer(x: &Array1<f64>, p: &ScorerParams) -> (Array1<f64>, Array1<f64>) {
    let z0 = p.w.dot(x);
    let h_hat = relu(z0.clone());
    (z0, h_hat)
}

fn mlp(h_hat: &[f64], q: &[f64], p: &ScorerParams) -> Result<Forward, ScorerError> {
    let d = p.dims;
    check("aggregated embedding", d.d_gnn, h_hat.len())?;
    check("question embedding", d.d_in, q.len())?;
    let mut h = Array1::zeros(d.d_gnn + d.d_in);
    h.slice_mut(s![..d.d_gnn]).assign(&ArrayView1::from(h_hat));
    h.slice_mut(s![d.d_gnn..]).assign(&ArrayView1::from(q));
    let z1 = p.w1.dot(&h) + &p.b1;
    let a1 = relu(z1.clone());
    let logits = p.w2.dot(&a1) + &p.b2;
    let logits = [logits[0], logits[1]];
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(ScorerError::NonFinite("logits"));
    }
    Ok(Forward {
        x: Array1::zeros(0),
        z0: Array1::zeros(0),
        h,
        z1,
        a1,
        probs: softmax(logits),
    })
}

pub(crate) fn forward(
    question: &[f64],
    center: &[f64],
    neighbors: &[&[f64]],
    p: &ScorerParams,
) -> Result<Forward, ScorerError> {
    let x = concat_mean(center, neighbors, p.dims.d_in)?;
    let (z0, h_hat) = gnn_layer(&x, p);
    let mut f = mlp(h_hat.as_slice().expect("contiguous"), question, p)?;
    f.x = x;
    f.z0 = z0;
    Ok(f)
}

/// `ReLU(W · [center ‖ mean(neighbors)])`, length d_gnn.
pub fn aggregate(center: &Embedding, neighbors: &[Embedding], p: &ScorerParams) -> Result<Embedding, ScorerError> {
    let views: Vec<&[f64]> = neighbors.iter().map(Embedding::as_slice).collect();
    let x = concat_mean(center.as_slice(), &views, p.dims.d_in)?;
    let (_, h_hat) = gnn_layer(&x, p);
    Embedding::new(h_hat.to_vec()).map_err(|_| ScorerError::NonFinite("aggregated embedding"))
}

/// `Softmax(W2 · ReLU(W1 · [ĥ ‖ q] + b1) + b2)`; the score is the relevant-class probability.
pub fn score(h_hat: &Embedding, question: &Embedding, p: &ScorerParams) -> Result<Prediction, ScorerError> {
    let f = mlp(h_hat.as_slice(), question.as_slice(), p)?;
    Ok(Prediction {
        probs: f.probs,
        score: f.probs[1],
    })
}

/// Full forward pass: aggregate then score.
pub fn predict(
    question: &Embedding,
    center: &Embedding,
    neighbors: &[Embedding],
    p: &ScorerParams,
) -> Result<Prediction, ScorerError> {
    let views: Vec<&[f64]> = neighbors.iter().map(Embedding::as_slice).collect();
    let f = forward(question.as_slice(), center.as_slice(), &views, p)?;
    Ok(Prediction {
        probs: f.probs,
        score: f.probs[1],
    })
}

fn example_forward(ex: &TrainingExample, p: &ScorerParams) -> Result<Forward, ScorerError> {
    let views: Vec<&[f64]> = ex.neighbor_embs.iter().map(Embedding::as_slice).collect();
    forward(ex.question_emb.as_slice(), ex.center_emb.as_slice(), &views, p)
}

fn example_loss(probs: [f64; 2], label: u8) -> f64 {
    -probs[usize::from(label)].max(LOG_CLAMP).ln()
}

/// Mean cross-entropy over the batch.
pub fn loss(batch: &[TrainingExample], p: &ScorerParams) -> Result<f64, ScorerError> {
    if batch.is_empty() {
        return Err(ScorerError::Empty("batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(example_forward(ex, p)?.probs, ex.label);
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`loss`] with the same shapes as [`ScorerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    fn zeros_like(p: &ScorerParams) -> Self {
        Self {
            w: Array2::zeros(p.w.raw_dim()),
            w1: Array2::zeros(p.w1.raw_dim()),
            b1: Array1::zeros(p.b1.raw_dim()),
            w2: Array2::zeros(p.w2.raw_dim()),
            b2: Array1::zeros(p.b2.raw_dim()),
        }
    }

    /// All entries in the order W, W1, b1, W2, b2 (row-major).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w
            .iter()
            .chain(self.w1.iter())
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scale(&mut self, k: f64) {
        self.w *= k;
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
    }
}

impl ScorerParams {
    /// All entries in the order used by [`Gradients::values`].
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w
            .iter_mut()
            .chain(self.w1.iter_mut())
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// `self -= lr · g`
    pub fn sgd_step(&mut self, lr: f64, g: &Gradients) {
        self.w.scaled_add(-lr, &g.w);
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }
}

/// `m += u ⊗ v`, skipping zero rows (common after ReLU).
fn add_outer(m: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (mut row, &ui) in m.rows_mut().into_iter().zip(u.iter()) {
        if ui != 0.0 {
            row.scaled_add(ui, v);
        }
    }
}

/// Exact gradient of the mean batch loss. The ReLU derivative at 0 is 0, and
/// an example whose clamped probability hits the floor contributes nothing.
pub fn grad(batch: &[TrainingExample], p: &ScorerParams) -> Result<Gradients, ScorerError> {
    if batch.is_empty() {
        return Err(ScorerError::Empty("batch"));
    }
    let d = p.dims;
    let mut g = Gradients::zeros_like(p);
    for ex in batch {
        let f = example_forward(ex, p)?;
        let label = usize::from(ex.label);
        if f.probs[label] < LOG_CLAMP {
            continue;
        }
        let mut dlogits = Array1::from(f.probs.to_vec());
        dlogits[label] -= 1.0;

        add_outer(&mut g.w2, &dlogits, &f.a1);
        g.b2 += &dlogits;

        let mut dz1 = p.w2.t().dot(&dlogits);
        dz1.zip_mut_with(&f.z1, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        add_outer(&mut g.w1, &dz1, &f.h);
        g.b1 += &dz1;

        let dh = p.w1.t().dot(&dz1);
        let mut dz0 = dh.slice(s![..d.d_gnn]).to_owned();
        dz0.zip_mut_with(&f.z0, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        add_outer(&mut g.w, &dz0, &f.x);
    }
    g.scale(1.0 / batch.len() as f64);
    Ok(g)
}
