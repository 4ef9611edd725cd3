//! Independent reference implementations used as test oracles. They share
//! no code with the crate beyond the plain data types.

#![allow(dead_code)]

use std::collections::HashMap;

use transtok::encoder::{EncoderConfig, LayerParams};
use transtok::numerics::Tensor;

pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

pub fn naive_layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) * inv * g + b));
    }
    out
}

/// Rotates pairs `(2k, 2k+1)` by `pos * theta^(-2k/d)`.
pub fn rope_oracle(v: &[f64], pos: usize, theta: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for k in 0..d / 2 {
        let angle = pos as f64 / theta.powf(2.0 * k as f64 / d as f64);
        let (s, c) = angle.sin_cos();
        out[2 * k] = v[2 * k] * c - v[2 * k + 1] * s;
        out[2 * k + 1] = v[2 * k] * s + v[2 * k + 1] * c;
    }
    out
}

/// Pre-norm attention sub-block with a dense `n x n` score matrix; disallowed
/// pairs get `-inf` before the softmax.
pub fn dense_attention_block(
    x: &Tensor,
    p: &LayerParams,
    cfg: &EncoderConfig,
    allowed: impl Fn(usize, usize) -> bool,
    theta: Option<f64>,
) -> Tensor {
    let (n, h) = (x.shape()[0], x.shape()[1]);
    let heads = cfg.heads;
    let d = h / heads;
    let hn = naive_layer_norm(x.data(), h, p.attn_norm_gain.data(), p.attn_norm_bias.data(), cfg.norm_eps);
    let q = naive_matmul(&hn, p.wq.data(), n, h, h);
    let k = naive_matmul(&hn, p.wk.data(), n, h, h);
    let v = naive_matmul(&hn, p.wv.data(), n, h, h);
    let mut attn = vec![0.0; n * h];
    for head in 0..heads {
        let slice = |m: &[f64], i: usize| m[i * h + head * d..i * h + (head + 1) * d].to_vec();
        let rot = |m: &[f64], i: usize| match theta {
            Some(t) => rope_oracle(&slice(m, i), i, t),
            None => slice(m, i),
        };
        let qs: Vec<Vec<f64>> = (0..n).map(|i| rot(&q, i)).collect();
        let ks: Vec<Vec<f64>> = (0..n).map(|i| rot(&k, i)).collect();
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    if allowed(i, j) {
                        qs[i].iter().zip(&ks[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..n {
                let w = exps[j] / z;
                for c in 0..d {
                    attn[i * h + head * d + c] += w * v[j * h + head * d + c];
                }
            }
        }
    }
    let o = naive_matmul(&attn, p.wo.data(), n, h, h);
    let out: Vec<f64> = o.iter().zip(x.data()).map(|(a, b)| a + b).collect();
    Tensor::new(vec![n, h], out).unwrap()
}

pub struct Ibm1Oracle {
    /// `t[(target, source)]`
    pub t: HashMap<(String, String), f64>,
    pub log_likelihood: Vec<f64>,
}

/// Textbook IBM Model 1 over characters, no NULL word, uniform
/// initialisation `1 / target_vocab`.
pub fn ibm1_oracle(pairs: &[(&str, &str)], target_vocab: usize, iterations: usize) -> Ibm1Oracle {
    let corpus: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(t, s)| (t.chars().map(String::from).collect(), s.chars().map(String::from).collect()))
        .collect();
    let mut t: HashMap<(String, String), f64> = HashMap::new();
    let init = 1.0 / target_vocab as f64;
    let prob = |t: &HashMap<(String, String), f64>, f: &String, e: &String, first: bool| {
        if first {
            init
        } else {
            *t.get(&(f.clone(), e.clone())).unwrap_or(&0.0)
        }
    };
    let mut lls = Vec::new();
    for it in 0..=iterations {
        let first = it == 0;
        let mut count: HashMap<(String, String), f64> = HashMap::new();
        let mut total: HashMap<String, f64> = HashMap::new();
        let mut ll = 0.0;
        for (fs, es) in &corpus {
            for f in fs {
                let z: f64 = es.iter().map(|e| prob(&t, f, e, first)).sum();
                ll += (z / es.len() as f64).ln();
                for e in es {
                    let c = prob(&t, f, e, first) / z;
                    *count.entry((f.clone(), e.clone())).or_default() += c;
                    *total.entry(e.clone()).or_default() += c;
                }
            }
        }
        lls.push(ll);
        if it == iterations {
            break;
        }
        t = count.into_iter().map(|((f, e), c)| { let tot = total[&e]; ((f, e), c / tot) }).collect();
    }
    Ibm1Oracle { t, log_likelihood: lls }
}

/// Count-weighted mean of source rows.
pub fn weighted_mean(counts: &[(usize, f64)], rows: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c.1).sum();
    let dim = rows[0].len();
    let mut out = vec![0.0; dim];
    for &(s, c) in counts {
        for (o, v) in out.iter_mut().zip(&rows[s]) {
            *o += c / total * v;
        }
    }
    out
}

pub fn toy_layer(cfg: &EncoderConfig, seed: u64) -> LayerParams {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.hidden;
    let f = cfg.intermediate;
    let mut gain = Tensor::randn(&[h], 0.1, &mut rng);
    gain.data_mut().iter_mut().for_each(|g| *g += 1.0);
    LayerParams {
        attn_norm_gain: gain.clone(),
        attn_norm_bias: Tensor::randn(&[h], 0.1, &mut rng),
        wq: Tensor::randn(&[h, h], 0.3, &mut rng),
        wk: Tensor::randn(&[h, h], 0.3, &mut rng),
        wv: Tensor::randn(&[h, h], 0.3, &mut rng),
        wo: Tensor::randn(&[h, h], 0.3, &mut rng),
        ffn_norm_gain: gain,
        ffn_norm_bias: Tensor::randn(&[h], 0.1, &mut rng),
        w_gate: Tensor::randn(&[h, f], 0.3, &mut rng),
        w_up: Tensor::randn(&[h, f], 0.3, &mut rng),
        w_down: Tensor::randn(&[f, h], 0.3, &mut rng),
    }
}

pub fn small_config(window: usize, max_context: usize) -> EncoderConfig {
    EncoderConfig {
        hidden: 16,
        layers: 3,
        heads: 2,
        intermediate: 24,
        vocab_size: 40,
        max_context,
        local_window: window,
        ..Default::default()
    }
}

/// Tokenizer with zero merges: every character of `corpus` is a token.
pub fn char_tokenizer(corpus: &str) -> transtok::tokenizer::TokenizerModel {
    use std::collections::BTreeSet;
    let alphabet: BTreeSet<char> = corpus.chars().filter(|c| !c.is_whitespace()).collect();
    let size = 5 + 1 + alphabet.len();
    transtok::tokenizer::train_bpe([corpus], &transtok::tokenizer::BpeTrainer::new(size)).unwrap().model
}
