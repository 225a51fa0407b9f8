use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScorerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDims {
    pub d_in: usize,
    pub d_gnn: usize,
    pub d_mlp: usize,
}

impl Default for ScorerDims {
    fn default() -> Self {
        Self {
            d_in: 768,
            d_gnn: 128,
            d_mlp: 128,
        }
    }
}

impl ScorerDims {
    pub fn new(d_in: usize, d_gnn: usize, d_mlp: usize) -> Result<Self, ScorerError> {
        if d_in == 0 || d_gnn == 0 || d_mlp == 0 {
            return Err(ScorerError::Config(format!(
                "all dimensions must be positive (got {d_in}/{d_gnn}/{d_mlp})"
            )));
        }
        Ok(Self { d_in, d_gnn, d_mlp })
    }
}

/// Trainable weights. `w` maps `[center ‖ mean]` (2·d_in) to d_gnn; `w1`
/// maps `[ĥ ‖ q]` (d_gnn + d_in) to d_mlp; `w2` maps d_mlp to the 2 logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub dims: ScorerDims,
    pub w: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl ScorerParams {
    /// Seeded uniform initialization in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init(dims: ScorerDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_w = 2 * dims.d_in;
        let fan_1 = dims.d_gnn + dims.d_in;
        let fan_2 = dims.d_mlp;
        let w = uniform(&mut rng, dims.d_gnn, fan_w, fan_w);
        let w1 = uniform(&mut rng, dims.d_mlp, fan_1, fan_1);
        let b1 = uniform(&mut rng, 1, dims.d_mlp, fan_1).row(0).to_owned();
        let w2 = uniform(&mut rng, 2, fan_2, fan_2);
        let b2 = uniform(&mut rng, 1, 2, fan_2).row(0).to_owned();
        Self {
            dims,
            w,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn zeros(dims: ScorerDims) -> Self {
        Self {
            dims,
            w: Array2::zeros((dims.d_gnn, 2 * dims.d_in)),
            w1: Array2::zeros((dims.d_mlp, dims.d_gnn + dims.d_in)),
            b1: Array1::zeros(dims.d_mlp),
            w2: Array2::zeros((2, dims.d_mlp)),
            b2: Array1::zeros(2),
        }
    }

    /// Copy with the neighbor-aggregation half of `w` zeroed, so scores
    /// depend only on the candidate's own text.
    pub fn without_neighbor_block(&self) -> Self {
        let mut p = self.clone();
        let d = self.dims.d_in;
        p.w.slice_mut(s![.., d..]).fill(0.0);
        p
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let d = self.dims;
        let shapes: [(&str, &[usize], [usize; 2]); 5] = [
            ("W", self.w.shape(), [d.d_gnn, 2 * d.d_in]),
            ("W1", self.w1.shape(), [d.d_mlp, d.d_gnn + d.d_in]),
            ("b1", self.b1.shape(), [d.d_mlp, 0]),
            ("W2", self.w2.shape(), [2, d.d_mlp]),
            ("b2", self.b2.shape(), [2, 0]),
        ];
        for (name, got, want) in shapes {
            let want: &[usize] = if want[1] == 0 { &want[..1] } else { &want };
            if got != want {
                return Err(ScorerError::Params(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        let finite = self.w.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ScorerError::NonFinite("parameters"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ParamsFile {
            dims: self.dims,
            w: rows(&self.w),
            w1: rows(&self.w1),
            b1: self.b1.to_vec(),
            w2: rows(&self.w2),
            b2: self.b2.to_vec(),
        };
        let mut s = serde_json::to_string(&file).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| ScorerError::Params(e.to_string()))?;
        let dims = ScorerDims::new(file.dims.d_in, file.dims.d_gnn, file.dims.d_mlp)?;
        let p = Self {
            dims,
            w: matrix("W", file.w)?,
            w1: matrix("W1", file.w1)?,
            b1: Array1::from(file.b1),
            w2: matrix("W2", file.w2)?,
            b2: Array1::from(file.b2),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        fs::write(path, self.to_json()).map_err(|e| ScorerError::Params(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let text = fs::read_to_string(path).map_err(|e| ScorerError::Params(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    dims: ScorerDims,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>) -> Result<Array2<f64>, ScorerError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(ScorerError::Params(format!("{name} has ragged rows")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, m), flat).map_err(|e| ScorerError::Params(format!("{name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = ScorerDims::new(4, 3, 5).unwrap();
        let a = ScorerParams::init(dims, 11);
        assert_eq!(a, ScorerParams::init(dims, 11));
        assert_ne!(a, ScorerParams::init(dims, 12));
        let bound = 1.0 / (8.0f64).sqrt();
        assert!(a.w.iter().all(|v| v.abs() <= bound));
        a.validate().unwrap();
        assert_eq!(a.num_params(), 3 * 8 + 5 * 7 + 5 + 2 * 5 + 2);
    }

    #[test]
    fn json_round_trip() {
        let p = ScorerParams::init(ScorerDims::new(3, 2, 4).unwrap(), 5);
        let back = ScorerParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn loader_rejects_bad_shapes() {
        let p = ScorerParams::init(ScorerDims::new(3, 2, 4).unwrap(), 5);
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["dims"]["d_gnn"] = 3.into();
        assert!(matches!(
            ScorerParams::from_json(&v.to_string()),
            Err(ScorerError::Params(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["W1"][0].as_array_mut().unwrap().pop();
        assert!(ScorerParams::from_json(&v.to_string()).is_err());
        assert!(ScorerParams::from_json("{}").is_err());
    }

    #[test]
    fn neighbor_block_zeroing() {
        let p = ScorerParams::init(ScorerDims::new(3, 2, 4).unwrap(), 5);
        let z = p.without_neighbor_block();
        assert!(z.w.slice(s![.., 3..]).iter().all(|v| *v == 0.0));
        assert_eq!(z.w.slice(s![.., ..3]), p.w.slice(s![.., ..3]));
    }
}
