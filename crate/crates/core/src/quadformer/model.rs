//! Transformer with two attention families per layer: a learnable proximity
//! kernel and content attention whose keys come from the previous layer.

use numkit::{Graph, Matrix, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::neg_distance;
use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// Pre-softplus kernel widths, `window×1`.
    pub width: Matrix,
    pub ff_in: Matrix,
    pub ff_in_bias: Matrix,
    pub ff_out: Matrix,
    pub ff_out_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub embed: Matrix,
    pub embed_bias: Matrix,
    pub layers: Vec<LayerWeights>,
    pub recon: Matrix,
    pub recon_bias: Matrix,
    pub classify: Matrix,
    pub classify_bias: Matrix,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl Weights {
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (m, d, f, l) = (cfg.input_dim, cfg.d_model, cfg.ff_dim, cfg.window);
        let layers = (0..cfg.layers)
            .map(|_| {
                let query = xavier(&mut rng, d, d);
                let key = xavier(&mut rng, d, d);
                (query, key)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|(query, key)| LayerWeights {
                key: if cfg.tied_key_init {
                    query.clone()
                } else {
                    key
                },
                query,
                value: xavier(&mut rng, d, d),
                width: Matrix::filled(l, 1, inv_softplus(cfg.init_gamma)),
                ff_in: xavier(&mut rng, d, f),
                ff_in_bias: Matrix::zeros(1, f),
                ff_out: xavier(&mut rng, f, d),
                ff_out_bias: Matrix::zeros(1, d),
            })
            .collect();
        Self {
            embed: xavier(&mut rng, m, d),
            embed_bias: Matrix::zeros(1, d),
            layers,
            recon: xavier(&mut rng, d, m),
            recon_bias: Matrix::zeros(1, m),
            classify: xavier(&mut rng, d, 1),
            classify_bias: Matrix::zeros(1, 1),
        }
    }

    /// Every tensor in a fixed order, with a stable name.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("embed".to_string(), &self.embed),
            ("embed_bias".to_string(), &self.embed_bias),
        ];
        for (i, lw) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("query", &lw.query),
                ("key", &lw.key),
                ("value", &lw.value),
                ("width", &lw.width),
                ("ff_in", &lw.ff_in),
                ("ff_in_bias", &lw.ff_in_bias),
                ("ff_out", &lw.ff_out),
                ("ff_out_bias", &lw.ff_out_bias),
            ] {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("recon".to_string(), &self.recon));
        out.push(("recon_bias".to_string(), &self.recon_bias));
        out.push(("classify".to_string(), &self.classify));
        out.push(("classify_bias".to_string(), &self.classify_bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embed, &mut self.embed_bias];
        for lw in &mut self.layers {
            out.extend([
                &mut lw.query,
                &mut lw.key,
                &mut lw.value,
                &mut lw.width,
                &mut lw.ff_in,
                &mut lw.ff_in_bias,
                &mut lw.ff_out,
                &mut lw.ff_out_bias,
            ]);
        }
        out.extend([
            &mut self.recon,
            &mut self.recon_bias,
            &mut self.classify,
            &mut self.classify_bias,
        ]);
        out
    }

    /// Rebuilds weights from tensors listed in [`Weights::named`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Matrix>) -> Option<Self> {
        let mut w = Self::init(cfg);
        let slots = w.tensors_mut();
        if slots.len() != tensors.len() {
            return None;
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return None;
            }
            *slot = t;
        }
        Some(w)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Which side of the disparity is held fixed when differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Gradients flow through both maps.
    Full,
    /// The context maps are held fixed, so only the kernel is pulled.
    MinPhase,
    /// The kernels are held fixed, so only the context maps are pushed.
    MaxPhase,
}

/// Handles to the interesting nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: Vec<Var>,
    pub recon: Var,
    pub logits: Var,
    /// Per-step disparity, `window×1`.
    pub disparity: Var,
    pub proximity: Vec<Var>,
    pub context: Vec<Var>,
}

/// Records a forward pass over `window` (`l×m`) on `g`. `params` must be
/// graph leaves created from [`Weights::tensors`], in order.
pub fn forward_on(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &[Var],
    window: &Matrix,
    routing: Routing,
) -> Forward {
    let per_layer = 8;
    let l = window.rows();
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let x = g.constant(window.clone());
    let dist = g.constant(neg_distance(l, cfg.proximity_exp));

    let e = g.matmul(x, params[0]);
    let mut h = g.add_row(e, params[1]);
    let mut prev_key: Option<Var> = None;
    let mut proximity = Vec::with_capacity(cfg.layers);
    let mut context = Vec::with_capacity(cfg.layers);
    let mut disparity: Option<Var> = None;
    let mut attended = h;

    for i in 0..cfg.layers {
        let p = &params[2 + i * per_layer..2 + (i + 1) * per_layer];
        let q = g.matmul(h, p[0]);
        let k = g.matmul(h, p[1]);
        let v = g.matmul(h, p[2]);
        let keys = prev_key.unwrap_or(k);
        let s = g.matmul_t(q, keys);
        let s = g.scale(s, scale);
        let c = g.softmax_rows(s);

        let width = g.softplus(p[3]);
        let w = g.mul_col(dist, width);
        let w = g.exp(w);
        let t = g.normalize_rows(w);

        let (tt, cc) = match routing {
            Routing::Full => (t, c),
            Routing::MinPhase => (t, g.detach(c)),
            Routing::MaxPhase => (g.detach(t), c),
        };
        let js = g.js_rows(tt, cc);
        disparity = Some(match disparity {
            Some(acc) => g.add(acc, js),
            None => js,
        });

        let a = g.matmul(c, v);
        attended = a;
        let z = g.add(a, h);
        let z = g.layer_norm(z);
        let f = g.matmul(z, p[4]);
        let f = g.add_row(f, p[5]);
        let f = g.gelu(f);
        let f = g.matmul(f, p[6]);
        let f = g.add_row(f, p[7]);
        let r = g.add(f, z);
        h = g.layer_norm(r);

        prev_key = Some(k);
        proximity.push(t);
        context.push(c);
    }

    let n = params.len();
    let recon_src = if cfg.recon_from_attention {
        attended
    } else {
        h
    };
    let recon = g.matmul(recon_src, params[n - 4]);
    let recon = g.add_row(recon, params[n - 3]);
    let logits = g.matmul(h, params[n - 2]);
    let logits = g.add_row(logits, params[n - 1]);
    let disparity = g.scale(
        disparity.expect("at least one layer"),
        1.0 / cfg.layers as f64,
    );

    Forward {
        params: params.to_vec(),
        recon,
        logits,
        disparity,
        proximity,
        context,
    }
}

/// Plain forward pass results.
#[derive(Debug, Clone)]
pub struct Output {
    pub recon: Matrix,
    /// Per-step attack probability from the classification head.
    pub probability: Vec<f64>,
    pub disparity: Vec<f64>,
    pub proximity: Vec<Matrix>,
    pub context: Vec<Matrix>,
}

pub fn forward(weights: &Weights, cfg: &ModelConfig, window: &Matrix) -> Output {
    let mut g = Graph::new();
    let params: Vec<Var> = weights
        .tensors()
        .into_iter()
        .map(|t| g.param(t.clone()))
        .collect();
    let f = forward_on(&mut g, cfg, &params, window, Routing::Full);
    Output {
        recon: g.value(f.recon).clone(),
        probability: g
            .value(f.logits)
            .data()
            .iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect(),
        disparity: g.value(f.disparity).data().to_vec(),
        proximity: f.proximity.iter().map(|v| g.value(*v).clone()).collect(),
        context: f.context.iter().map(|v| g.value(*v).clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadformer::attention::{tcd, tpc_matrix};

    fn tiny() -> ModelConfig {
        ModelConfig {
            window: 6,
            input_dim: 3,
            d_model: 4,
            ff_dim: 5,
            layers: 2,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn window(cfg: &ModelConfig) -> Matrix {
        Matrix::from_fn(cfg.window, cfg.input_dim, |i, j| {
            ((i * 7 + j * 3) as f64).sin()
        })
    }

    #[test]
    fn maps_are_row_stochastic() {
        let cfg = tiny();
        let out = forward(&Weights::init(&cfg), &cfg, &window(&cfg));
        for m in out.proximity.iter().chain(&out.context) {
            for s in m.row_sums().data() {
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!(m.data().iter().all(|v| *v >= 0.0));
        }
        assert_eq!(out.recon.shape(), (cfg.window, cfg.input_dim));
    }

    #[test]
    fn graph_path_matches_value_helpers() {
        let cfg = tiny();
        let w = Weights::init(&cfg);
        let out = forward(&w, &cfg, &window(&cfg));
        let gamma: Vec<f64> = w.layers[0]
            .width
            .data()
            .iter()
            .map(|r| (1.0 + r.exp()).ln())
            .collect();
        assert!((&out.proximity[0] - &tpc_matrix(&gamma, cfg.proximity_exp)).max_abs() < 1e-12);
        let d = tcd(&out.proximity, &out.context);
        for (a, b) in d.iter().zip(&out.disparity) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_round_trip() {
        let cfg = tiny();
        let w = Weights::init(&cfg);
        let back = Weights::from_tensors(&cfg, w.tensors().into_iter().cloned().collect()).unwrap();
        assert_eq!(w, back);
        assert_eq!(w.named().len(), 2 + 8 * cfg.layers + 4);
    }

    #[test]
    fn uniform_attention_reconstructs_the_time_average() {
        let cfg = ModelConfig {
            window: 3,
            input_dim: 2,
            d_model: 2,
            ff_dim: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        let mut w = Weights::init(&cfg);
        w.embed = Matrix::identity(2);
        w.layers[0].query = Matrix::zeros(2, 2);
        w.layers[0].value = Matrix::identity(2);
        w.recon = Matrix::identity(2);
        let x = Matrix::from_rows(&[[1.0, -2.0], [4.0, 0.5], [-2.0, 3.0]]);
        let out = forward(&w, &cfg, &x);
        let avg = [1.0, 0.5];
        for i in 0..3 {
            assert!((out.recon.get(i, 0) - avg[0]).abs() < 1e-12);
            assert!((out.recon.get(i, 1) - avg[1]).abs() < 1e-12);
        }
        assert!(out.probability.iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn repeated_windows_give_identical_outputs() {
        let cfg = tiny();
        let w = Weights::init(&cfg);
        let a = forward(&w, &cfg, &window(&cfg));
        let b = forward(&w, &cfg, &window(&cfg));
        assert_eq!(a.recon, b.recon);
        assert_eq!(a.disparity, b.disparity);
    }

    #[test]
    fn init_width_matches_config() {
        assert!((inv_softplus(0.5).exp().ln_1p() - 0.5).abs() < 1e-12);
    }
}
