//! Single-layer LSTM cluster scorer with a sigmoid output head.
//!
//! Parameters live in one flat `Vec<f64>` laid out as
//! `W_x (4H × I) | W_h (4H × H) | b (4H) | w_out (H) | b_out (1)`, gate
//! blocks in the order input, forget, output, candidate. The flat layout
//! lets gradient code treat every parameter the same way.

mod dataset;
mod train;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use dataset::{build_training_set, dense_top10_labels, TrainingInstance};
pub use train::{train, TrainConfig, TrainOutcome};

pub const LSTM_MAGIC: &[u8; 4] = b"CLSL";
pub const LSTM_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    i: usize,
    h: usize,
    wh: usize,
    b: usize,
    wout: usize,
    bout: usize,
    len: usize,
}

impl Layout {
    fn new(i: usize, h: usize) -> Self {
        let wh = 4 * h * i;
        let b = wh + 4 * h * h;
        let wout = b + 4 * h;
        let bout = wout + h;
        Self {
            i,
            h,
            wh,
            b,
            wout,
            bout,
            len: bout + 1,
        }
    }
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let len = Layout::new(input_dim, hidden_dim).len;
        Self {
            input_dim,
            hidden_dim,
            data: vec![0.0; len],
        }
    }

    /// Uniform(−r, r) initialization with r = 1/√hidden_dim.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let r = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut p.data {
            *x = rng.random_range(-r..r);
        }
        p
    }

    pub fn from_flat(input_dim: usize, hidden_dim: usize, data: Vec<f64>) -> Result<Self> {
        let len = Layout::new(input_dim, hidden_dim).len;
        if data.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { record: 0 });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            data,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input_dim, self.hidden_dim)
    }

    fn steps(&self, sequence: &[f64]) -> Result<usize> {
        if self.input_dim == 0 || sequence.len() % self.input_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: sequence.len(),
            });
        }
        Ok(sequence.len() / self.input_dim)
    }

    /// Per-step scores for a row-major `T × input_dim` sequence.
    pub fn forward(&self, sequence: &[f64]) -> Result<Vec<f64>> {
        let t = self.steps(sequence)?;
        let mut tape = Tape::default();
        self.run(sequence, t, &mut tape);
        Ok(tape.logits.iter().map(|&z| sigmoid(z)).collect())
    }

    /// Mean per-step binary cross-entropy.
    pub fn loss(&self, sequence: &[f64], labels: &[f64]) -> Result<f64> {
        let t = self.check_instance(sequence, labels)?;
        let mut tape = Tape::default();
        self.run(sequence, t, &mut tape);
        Ok(mean_bce(&tape.logits, labels))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, sequence: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.data.len()];
        let mut tape = Tape::default();
        let loss = self.accumulate_grad(sequence, labels, 1.0, &mut grad, &mut tape)?;
        Ok((loss, grad))
    }

    fn check_instance(&self, sequence: &[f64], labels: &[f64]) -> Result<usize> {
        let t = self.steps(sequence)?;
        if labels.len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                found: labels.len(),
            });
        }
        Ok(t)
    }

    /// Adds `scale × ∂loss/∂θ` into `grad` and returns the loss.
    pub(crate) fn accumulate_grad(
        &self,
        sequence: &[f64],
        labels: &[f64],
        scale: f64,
        grad: &mut [f64],
        tape: &mut Tape,
    ) -> Result<f64> {
        let t = self.check_instance(sequence, labels)?;
        self.run(sequence, t, tape);
        let loss = mean_bce(&tape.logits, labels);
        if t > 0 {
            self.backward(sequence, labels, t, scale, grad, tape);
        }
        Ok(loss)
    }

    fn run(&self, x: &[f64], t: usize, tape: &mut Tape) {
        let Layout {
            i: ni,
            h,
            wh,
            b,
            wout,
            bout,
            ..
        } = self.layout();
        let p = &self.data;
        tape.reset(t, h);
        let mut pre = vec![0.0; 4 * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for s in 0..t {
            let xs = &x[s * ni..(s + 1) * ni];
            for (r, out) in pre.iter_mut().enumerate() {
                let mut a = p[b + r] + dot64(&p[r * ni..(r + 1) * ni], xs);
                if s > 0 {
                    a += dot64(&p[wh + r * h..wh + (r + 1) * h], &h_prev);
                }
                *out = a;
            }
            let gates = &mut tape.gates[s * 4 * h..(s + 1) * 4 * h];
            for k in 0..h {
                let ig = sigmoid(pre[k]);
                let fg = sigmoid(pre[h + k]);
                let og = sigmoid(pre[2 * h + k]);
                let gg = pre[3 * h + k].tanh();
                gates[k] = ig;
                gates[h + k] = fg;
                gates[2 * h + k] = og;
                gates[3 * h + k] = gg;
                let c = fg * c_prev[k] + ig * gg;
                let tc = c.tanh();
                tape.c[s * h + k] = c;
                tape.tc[s * h + k] = tc;
                tape.h[s * h + k] = og * tc;
            }
            h_prev.copy_from_slice(&tape.h[s * h..(s + 1) * h]);
            c_prev.copy_from_slice(&tape.c[s * h..(s + 1) * h]);
            tape.logits[s] = p[bout] + dot64(&p[wout..wout + h], &tape.h[s * h..(s + 1) * h]);
        }
    }

    fn backward(
        &self,
        x: &[f64],
        labels: &[f64],
        t: usize,
        scale: f64,
        g: &mut [f64],
        tape: &Tape,
    ) {
        let Layout {
            i: ni,
            h,
            wh,
            b,
            wout,
            bout,
            ..
        } = self.layout();
        let p = &self.data;
        let inv_t = scale / t as f64;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let mut dh = vec![0.0; h];
        for s in (0..t).rev() {
            let hs = &tape.h[s * h..(s + 1) * h];
            let dz = (sigmoid(tape.logits[s]) - labels[s]) * inv_t;
            g[bout] += dz;
            axpy(&mut g[wout..wout + h], dz, hs);
            for k in 0..h {
                dh[k] = dz * p[wout + k] + dh_next[k];
            }
            let gates = &tape.gates[s * 4 * h..(s + 1) * 4 * h];
            for k in 0..h {
                let (ig, fg, og, gg) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let tc = tape.tc[s * h + k];
                let c_prev = if s == 0 { 0.0 } else { tape.c[(s - 1) * h + k] };
                let dc = dh[k] * og * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * gg * ig * (1.0 - ig);
                da[h + k] = dc * c_prev * fg * (1.0 - fg);
                da[2 * h + k] = dh[k] * tc * og * (1.0 - og);
                da[3 * h + k] = dc * ig * (1.0 - gg * gg);
                dc_next[k] = dc * fg;
            }
            let xs = &x[s * ni..(s + 1) * ni];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in da.iter().enumerate() {
                g[b + r] += d;
                axpy(&mut g[r * ni..(r + 1) * ni], d, xs);
                if s > 0 {
                    let hp = &tape.h[(s - 1) * h..s * h];
                    axpy(&mut g[wh + r * h..wh + (r + 1) * h], d, hp);
                    axpy(&mut dh_next, d, &p[wh + r * h..wh + (r + 1) * h]);
                }
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(LSTM_MAGIC)?;
        w.write_u32::<LittleEndian>(LSTM_VERSION)?;
        w.write_u32::<LittleEndian>(self.input_dim as u32)?;
        w.write_u32::<LittleEndian>(self.hidden_dim as u32)?;
        for &x in &self.data {
            w.write_f64::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Truncated { record: 0 })?;
        if &magic != LSTM_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(LSTM_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != LSTM_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: LSTM_VERSION,
                found: version,
            });
        }
        let input_dim = r.read_u32::<LittleEndian>()? as usize;
        let hidden_dim = r.read_u32::<LittleEndian>()? as usize;
        let len = Layout::new(input_dim, hidden_dim).len;
        let mut data = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(|_| Error::Truncated { record: 0 })?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::MalformedHeader(
                "trailing bytes after parameters".into(),
            ));
        }
        Self::from_flat(input_dim, hidden_dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Forward activations kept for backpropagation; reused across calls.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    gates: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

impl Tape {
    fn reset(&mut self, t: usize, h: usize) {
        self.gates.resize(t * 4 * h, 0.0);
        self.c.resize(t * h, 0.0);
        self.tc.resize(t * h, 0.0);
        self.h.resize(t * h, 0.0);
        self.logits.resize(t, 0.0);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// BCE of `sigmoid(z)` against `y`, written in logit form for stability.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn mean_bce(logits: &[f64], labels: &[f64]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_logit(z, y))
        .sum::<f64>()
        / logits.len() as f64
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
