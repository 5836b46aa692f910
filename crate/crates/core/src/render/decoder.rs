use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::sigmoid;
use crate::grid::Vec3;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_FREQUENCIES: usize = 4;

/// Maps interpolated appearance channels (and optionally the view direction)
/// to RGB logits; colors are the sigmoid of the logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoder {
    /// Appearance channels are the RGB logits themselves.
    Direct,
    Mlp(MlpDecoder),
}

/// Two-layer perceptron over `(latent, encoded direction)` with a ReLU hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpDecoder {
    pub latent_dim: usize,
    pub hidden: usize,
    pub frequencies: usize,
    /// `w1 (hidden x input) | b1 (hidden) | w2 (3 x hidden) | b2 (3)`, row-major.
    pub params: Vec<f32>,
}

impl MlpDecoder {
    pub fn new(latent_dim: usize, hidden: usize, frequencies: usize, seed: u64) -> Self {
        let input = latent_dim + 3 + 6 * frequencies;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_len(latent_dim, hidden, frequencies));
        let s1 = (2.0 / input as f64).sqrt();
        params.extend((0..hidden * input).map(|_| (rng.random_range(-1.0..1.0) * s1) as f32));
        params.extend(std::iter::repeat_n(0.0f32, hidden));
        let s2 = (1.0 / hidden as f64).sqrt();
        params.extend((0..3 * hidden).map(|_| (rng.random_range(-1.0..1.0) * s2) as f32));
        params.extend([0.0f32; 3]);
        Self { latent_dim, hidden, frequencies, params }
    }

    pub fn param_len(latent_dim: usize, hidden: usize, frequencies: usize) -> usize {
        let input = latent_dim + 3 + 6 * frequencies;
        hidden * input + hidden + 3 * hidden + 3
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + 3 + 6 * self.frequencies
    }

    fn validate(&self) -> Result<()> {
        if self.params.len() != Self::param_len(self.latent_dim, self.hidden, self.frequencies) {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} weights, got {}",
                Self::param_len(self.latent_dim, self.hidden, self.frequencies),
                self.params.len()
            )));
        }
        Ok(())
    }

    fn encode(&self, latent: &[f64], dir: &Vec3, x: &mut Vec<f64>) {
        x.clear();
        x.extend_from_slice(&latent[..self.latent_dim]);
        x.extend(dir.iter());
        let mut scale = 1.0;
        for _ in 0..self.frequencies {
            for a in 0..3 {
                x.push((scale * dir[a]).sin());
                x.push((scale * dir[a]).cos());
            }
            scale *= 2.0;
        }
    }

    fn forward(&self, x: &[f64], hidden_out: &mut Vec<f64>) -> [f64; 3] {
        let (n_in, n_h) = (self.input_dim(), self.hidden);
        let (w1, rest) = self.params.split_at(n_h * n_in);
        let (b1, rest) = rest.split_at(n_h);
        let (w2, b2) = rest.split_at(3 * n_h);
        hidden_out.clear();
        for h in 0..n_h {
            let row = &w1[h * n_in..(h + 1) * n_in];
            let pre: f64 = b1[h] as f64 + row.iter().zip(x).map(|(w, v)| *w as f64 * v).sum::<f64>();
            hidden_out.push(pre.max(0.0));
        }
        let mut out = [0.0; 3];
        for (o, val) in out.iter_mut().enumerate() {
            let row = &w2[o * n_h..(o + 1) * n_h];
            *val = b2[o] as f64 + row.iter().zip(hidden_out.iter()).map(|(w, v)| *w as f64 * v).sum::<f64>();
        }
        out
    }
}

impl Decoder {
    pub fn validate(&self, appearance_channels: usize) -> Result<()> {
        match self {
            Decoder::Direct if appearance_channels != 3 => Err(Error::InvalidInput(format!(
                "direct decoder needs 3 appearance channels, field has {appearance_channels}"
            ))),
            Decoder::Direct => Ok(()),
            Decoder::Mlp(m) => {
                m.validate()?;
                if m.latent_dim != appearance_channels {
                    return Err(Error::InvalidInput(format!(
                        "decoder latent size {} does not match {appearance_channels} appearance channels",
                        m.latent_dim
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn params(&self) -> &[f32] {
        match self {
            Decoder::Direct => &[],
            Decoder::Mlp(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        match self {
            Decoder::Direct => &mut [],
            Decoder::Mlp(m) => &mut m.params,
        }
    }

    pub fn logits(&self, latent: &[f64], dir: &Vec3) -> [f64; 3] {
        match self {
            Decoder::Direct => [latent[0], latent[1], latent[2]],
            Decoder::Mlp(m) => {
                let mut x = Vec::with_capacity(m.input_dim());
                let mut h = Vec::with_capacity(m.hidden);
                m.encode(latent, dir, &mut x);
                m.forward(&x, &mut h)
            }
        }
    }

    pub fn rgb(&self, latent: &[f64], dir: &Vec3) -> [f64; 3] {
        self.logits(latent, dir).map(sigmoid)
    }

    /// Pulls `d_logits` back to the latent input (written to `d_latent`) and,
    /// for the MLP, accumulates weight gradients into `d_params`.
    pub fn backward(&self, latent: &[f64], dir: &Vec3, d_logits: [f64; 3], d_latent: &mut [f64], d_params: &mut [f64]) {
        match self {
            Decoder::Direct => d_latent[..3].copy_from_slice(&d_logits),
            Decoder::Mlp(m) => {
                let (n_in, n_h) = (m.input_dim(), m.hidden);
                let mut x = Vec::with_capacity(n_in);
                let mut h = Vec::with_capacity(n_h);
                m.encode(latent, dir, &mut x);
                m.forward(&x, &mut h);
                let w1 = &m.params[..n_h * n_in];
                let w2_off = n_h * n_in + n_h;
                let w2 = &m.params[w2_off..w2_off + 3 * n_h];
                let b2_off = w2_off + 3 * n_h;
                for o in 0..3 {
                    d_params[b2_off + o] += d_logits[o];
                    for k in 0..n_h {
                        d_params[w2_off + o * n_h + k] += d_logits[o] * h[k];
                    }
                }
                d_latent[..m.latent_dim].fill(0.0);
                for k in 0..n_h {
                    if h[k] <= 0.0 {
                        continue;
                    }
                    let d_pre: f64 = (0..3).map(|o| d_logits[o] * w2[o * n_h + k] as f64).sum();
                    d_params[n_h * n_in + k] += d_pre;
                    let row = k * n_in;
                    for i in 0..n_in {
                        d_params[row + i] += d_pre * x[i];
                    }
                    for (i, d) in d_latent[..m.latent_dim].iter_mut().enumerate() {
                        *d += d_pre * w1[row + i] as f64;
                    }
                }
            }
        }
    }
}
