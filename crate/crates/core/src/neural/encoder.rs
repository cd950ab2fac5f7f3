//! The encoder and prediction head: forward passes with caches, and exact
//! analytic backward passes accumulating into a named gradient map.
//!
//! Terrain branch: conv -> ReLU -> conv -> ReLU -> spatial mean.
//! Rain branch: per-frame conv stack -> spatial mean -> linear token ->
//! + sinusoidal positions -> pre-norm transformer layers -> temporal mean.
//! The two pooled features concatenate (rain first) into the embedding; the
//! head is a small MLP ending in a sigmoid.
//!
//! Everything is batched: convolutions fold the batch (and, for rain, the
//! frame axis) into one im2col GEMM.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};

use crate::error::{Error, Result};
use crate::neural::layers::{
    conv3_forward, conv3_backward, layer_norm_backward, layer_norm_forward, linear_backward,
    linear_forward, positional_encoding, relu_backward, relu_forward, sigmoid, sigmoid_backward,
    softmax_backward, softmax_forward, spatial_mean_backward, spatial_mean_forward,
    temporal_mean_backward, temporal_mean_forward, ConvCache, LayerNormCache,
};
use crate::neural::params::{EncoderConfig, GradMap, ModelParams};
use crate::neural::real::Real;

/// One encoder output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F: Real> {
    pub z: Array1<F>,
    pub normalized: bool,
}

impl<F: Real> Embedding<F> {
    pub fn new(z: Array1<F>, normalized: bool) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding must be finite"));
        }
        if normalized {
            let norm = z.dot(&z).sqrt().to_f64();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "normalized embedding has norm {norm}"
                )));
            }
        }
        Ok(Embedding { z, normalized })
    }
}

/// Model inputs for a batch: rain `[b, t, h, w]`, terrain `[b, c, h, w]`.
#[derive(Debug, Clone)]
pub struct BatchInput<F: Real> {
    pub rain: Array4<F>,
    pub terrain: Array4<F>,
}

impl<F: Real> BatchInput<F> {
    fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let (b, t, h, w) = self.rain.dim();
        let (bt, c, ht, wt) = self.terrain.dim();
        if b == 0 {
            return Err(Error::validation("batch must be non-empty"));
        }
        if t != cfg.seq_len {
            return Err(Error::validation(format!(
                "rain has {t} frames, config expects {}",
                cfg.seq_len
            )));
        }
        if c != cfg.terrain_in {
            return Err(Error::validation(format!(
                "terrain has {c} channels, config expects {}",
                cfg.terrain_in
            )));
        }
        if bt != b || ht != h || wt != w {
            return Err(Error::validation("rain and terrain batch shapes must agree"));
        }
        Ok(())
    }
}

// ── Caches ────────────────────────────────────────────────────────────────────

struct BranchCache<F: Real> {
    conv1: ConvCache<F>,
    pre1: Array4<F>,
    conv2: ConvCache<F>,
    pre2: Array4<F>,
    /// Spatial size of the pooled activation.
    hw: (usize, usize),
}

struct BlockCache<F: Real> {
    ln1: LayerNormCache<F>,
    ln1_out: Array2<F>,
    q: Array3<F>,
    k: Array3<F>,
    v: Array3<F>,
    attn_p: Array4<F>,
    attn_concat: Array3<F>,
    ln2: LayerNormCache<F>,
    ln2_out: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
}

/// Everything the encoder backward pass needs.
pub struct EncoderCache<F: Real> {
    shape: (usize, usize, usize, usize),
    terrain: BranchCache<F>,
    rain: BranchCache<F>,
    pooled_rain: Array2<F>,
    blocks: Vec<BlockCache<F>>,
    norms: Option<Array1<F>>,
    normalized_emb: Option<Array2<F>>,
}

/// Head forward activations.
pub struct HeadCache<F: Real> {
    emb: Array2<F>,
    pre1: Array2<F>,
    act1: Array2<F>,
    probs: Array1<F>,
}

// ── Helpers ───────────────────────────────────────────────────────────────────

fn w2<'a, F: Real>(params: &'a ModelParams<F>, name: &str) -> ndarray::ArrayView2<'a, F> {
    params
        .get(name)
        .view()
        .into_dimensionality()
        .expect("2-d parameter")
}

fn w4<'a, F: Real>(params: &'a ModelParams<F>, name: &str) -> ndarray::ArrayView4<'a, F> {
    params
        .get(name)
        .view()
        .into_dimensionality()
        .expect("4-d parameter")
}

fn w1<'a, F: Real>(params: &'a ModelParams<F>, name: &str) -> ndarray::ArrayView1<'a, F> {
    params
        .get(name)
        .view()
        .into_dimensionality()
        .expect("1-d parameter")
}

fn add_grad<F: Real>(grads: &mut GradMap<F>, name: &str, delta: ndarray::ArrayD<F>) {
    match grads.get_mut(name) {
        Some(g) => *g += &delta,
        None => {
            grads.insert(name.to_string(), delta);
        }
    }
}

fn flat<F: Real>(x: &Array3<F>) -> Array2<F> {
    let (b, t, d) = x.dim();
    x.clone().into_shape((b * t, d)).expect("contiguous tokens")
}

fn unflat<F: Real>(x: Array2<F>, b: usize, t: usize) -> Array3<F> {
    let d = x.dim().1;
    x.into_shape((b, t, d)).expect("contiguous tokens")
}

fn conv_stack_forward<F: Real>(
    input: &Array4<F>,
    params: &ModelParams<F>,
    prefix: &str,
) -> (Array2<F>, BranchCache<F>) {
    let w1_ = w4(params, &format!("{prefix}.conv1.weight"));
    let b1 = w1(params, &format!("{prefix}.conv1.bias"));
    let w2_ = w4(params, &format!("{prefix}.conv2.weight"));
    let b2 = w1(params, &format!("{prefix}.conv2.bias"));
    let (pre1, conv1) = conv3_forward(input, &w1_.to_owned(), &b1.to_owned());
    let act1 = relu_forward(&pre1);
    let (pre2, conv2) = conv3_forward(&act1, &w2_.to_owned(), &b2.to_owned());
    let act2 = relu_forward(&pre2);
    let pooled = spatial_mean_forward(&act2);
    let (_, _, h, w) = act2.dim();
    (pooled, BranchCache { conv1, pre1, conv2, pre2, hw: (h, w) })
}

fn conv_stack_backward<F: Real>(
    d_pooled: &Array2<F>,
    cache: &BranchCache<F>,
    params: &ModelParams<F>,
    prefix: &str,
    grads: &mut GradMap<F>,
    compute_dx: bool,
) -> Option<Array4<F>> {
    let (h, w) = cache.hw;
    let d_act2 = spatial_mean_backward(d_pooled, h, w);
    let d_pre2 = relu_backward(&d_act2, &cache.pre2);
    let w2_ = w4(params, &format!("{prefix}.conv2.weight")).to_owned();
    let (d_act1, dw2, db2) = conv3_backward(&d_pre2, &cache.conv2, &w2_, true);
    add_grad(grads, &format!("{prefix}.conv2.weight"), dw2.into_dyn());
    add_grad(grads, &format!("{prefix}.conv2.bias"), db2.into_dyn());
    let d_pre1 = relu_backward(&d_act1.expect("requested dx"), &cache.pre1);
    let w1_ = w4(params, &format!("{prefix}.conv1.weight")).to_owned();
    let (dx, dw1, db1) = conv3_backward(&d_pre1, &cache.conv1, &w1_, compute_dx);
    add_grad(grads, &format!("{prefix}.conv1.weight"), dw1.into_dyn());
    add_grad(grads, &format!("{prefix}.conv1.bias"), db1.into_dyn());
    dx
}

// ── Transformer block ─────────────────────────────────────────────────────────

fn block_forward<F: Real>(
    x: &Array3<F>,
    params: &ModelParams<F>,
    layer: usize,
) -> (Array3<F>, BlockCache<F>) {
    let cfg = &params.config;
    let (b, t, d) = x.dim();
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let p = |suffix: &str| format!("transformer.{layer}.{suffix}");

    let x_flat = flat(x);
    let (ln1_out, ln1) = layer_norm_forward(
        &x_flat,
        &w1(params, &p("ln1.gain")).to_owned(),
        &w1(params, &p("ln1.bias")).to_owned(),
    );
    let q_flat = linear_forward(
        &ln1_out,
        &w2(params, &p("attn.wq.weight")).to_owned(),
        &w1(params, &p("attn.wq.bias")).to_owned(),
    );
    let k_flat = linear_forward(
        &ln1_out,
        &w2(params, &p("attn.wk.weight")).to_owned(),
        &w1(params, &p("attn.wk.bias")).to_owned(),
    );
    let v_flat = linear_forward(
        &ln1_out,
        &w2(params, &p("attn.wv.weight")).to_owned(),
        &w1(params, &p("attn.wv.bias")).to_owned(),
    );
    let q = unflat(q_flat, b, t);
    let k = unflat(k_flat, b, t);
    let v = unflat(v_flat, b, t);

    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut attn_p = Array4::zeros((b, heads, t, t));
    let mut concat = Array3::zeros((b, t, d));
    for bi in 0..b {
        for hi in 0..heads {
            let cols = hi * dh..(hi + 1) * dh;
            let qh = q.slice(s![bi, .., cols.clone()]);
            let kh = k.slice(s![bi, .., cols.clone()]);
            let vh = v.slice(s![bi, .., cols.clone()]);
            let scores = qh.dot(&kh.t()).mapv(|v| v * scale);
            let probs = softmax_forward(&scores);
            let oh = probs.dot(&vh);
            attn_p.slice_mut(s![bi, hi, .., ..]).assign(&probs);
            concat.slice_mut(s![bi, .., cols]).assign(&oh);
        }
    }
    let attn_out_flat = linear_forward(
        &flat(&concat),
        &w2(params, &p("attn.wo.weight")).to_owned(),
        &w1(params, &p("attn.wo.bias")).to_owned(),
    );
    let x_mid = x + &unflat(attn_out_flat, b, t);

    let x_mid_flat = flat(&x_mid);
    let (ln2_out, ln2) = layer_norm_forward(
        &x_mid_flat,
        &w1(params, &p("ln2.gain")).to_owned(),
        &w1(params, &p("ln2.bias")).to_owned(),
    );
    let ff_pre = linear_forward(
        &ln2_out,
        &w2(params, &p("ff1.weight")).to_owned(),
        &w1(params, &p("ff1.bias")).to_owned(),
    );
    let ff_act = relu_forward(&ff_pre);
    let ff_out = linear_forward(
        &ff_act,
        &w2(params, &p("ff2.weight")).to_owned(),
        &w1(params, &p("ff2.bias")).to_owned(),
    );
    let y = &x_mid + &unflat(ff_out, b, t);

    (
        y,
        BlockCache {
            ln1,
            ln1_out,
            q,
            k,
            v,
            attn_p,
            attn_concat: concat,
            ln2,
            ln2_out,
            ff_pre,
            ff_act,
        },
    )
}

fn block_backward<F: Real>(
    dy: &Array3<F>,
    cache: &BlockCache<F>,
    params: &ModelParams<F>,
    layer: usize,
    grads: &mut GradMap<F>,
) -> Array3<F> {
    let cfg = &params.config;
    let (b, t, d) = dy.dim();
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let p = |suffix: &str| format!("transformer.{layer}.{suffix}");

    // feed-forward residual: y = x_mid + ff2(relu(ff1(ln2(x_mid))))
    let dy_flat = flat(dy);
    let (d_ff_act, dw_ff2, db_ff2) = linear_backward(
        &dy_flat,
        &cache.ff_act,
        &w2(params, &p("ff2.weight")).to_owned(),
    );
    add_grad(grads, &p("ff2.weight"), dw_ff2.into_dyn());
    add_grad(grads, &p("ff2.bias"), db_ff2.into_dyn());
    let d_ff_pre = relu_backward(&d_ff_act, &cache.ff_pre);
    let (d_ln2_out, dw_ff1, db_ff1) = linear_backward(
        &d_ff_pre,
        &cache.ln2_out,
        &w2(params, &p("ff1.weight")).to_owned(),
    );
    add_grad(grads, &p("ff1.weight"), dw_ff1.into_dyn());
    add_grad(grads, &p("ff1.bias"), db_ff1.into_dyn());
    let (d_x_mid_ln, dg_ln2, db_ln2) = layer_norm_backward(
        &d_ln2_out,
        &cache.ln2,
        &w1(params, &p("ln2.gain")).to_owned(),
    );
    add_grad(grads, &p("ln2.gain"), dg_ln2.into_dyn());
    add_grad(grads, &p("ln2.bias"), db_ln2.into_dyn());
    let d_x_mid = dy + &unflat(d_x_mid_ln, b, t);

    // attention residual: x_mid = x + wo(attend(ln1(x)))
    let d_x_mid_flat = flat(&d_x_mid);
    let (d_concat_flat, dw_o, db_o) = linear_backward(
        &d_x_mid_flat,
        &flat(&cache.attn_concat),
        &w2(params, &p("attn.wo.weight")).to_owned(),
    );
    add_grad(grads, &p("attn.wo.weight"), dw_o.into_dyn());
    add_grad(grads, &p("attn.wo.bias"), db_o.into_dyn());
    let d_concat = unflat(d_concat_flat, b, t);

    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = Array3::zeros((b, t, d));
    let mut dk = Array3::zeros((b, t, d));
    let mut dv = Array3::zeros((b, t, d));
    for bi in 0..b {
        for hi in 0..heads {
            let cols = hi * dh..(hi + 1) * dh;
            let d_oh = d_concat.slice(s![bi, .., cols.clone()]);
            let probs = cache.attn_p.slice(s![bi, hi, .., ..]).to_owned();
            let vh = cache.v.slice(s![bi, .., cols.clone()]);
            let d_probs = d_oh.dot(&vh.t());
            let d_vh = probs.t().dot(&d_oh);
            let d_scores = softmax_backward(&d_probs, &probs).mapv(|v| v * scale);
            let qh = cache.q.slice(s![bi, .., cols.clone()]);
            let kh = cache.k.slice(s![bi, .., cols.clone()]);
            let d_qh = d_scores.dot(&kh);
            let d_kh = d_scores.t().dot(&qh);
            dq.slice_mut(s![bi, .., cols.clone()]).assign(&d_qh);
            dk.slice_mut(s![bi, .., cols.clone()]).assign(&d_kh);
            dv.slice_mut(s![bi, .., cols]).assign(&d_vh);
        }
    }

    let mut d_ln1_out = Array2::zeros((b * t, d));
    for (proj, diff) in [("wq", &dq), ("wk", &dk), ("wv", &dv)] {
        let (dx, dw, db) = linear_backward(
            &flat(diff),
            &cache.ln1_out,
            &w2(params, &p(&format!("attn.{proj}.weight"))).to_owned(),
        );
        d_ln1_out += &dx;
        add_grad(grads, &p(&format!("attn.{proj}.weight")), dw.into_dyn());
        add_grad(grads, &p(&format!("attn.{proj}.bias")), db.into_dyn());
    }
    let (d_x_ln, dg_ln1, db_ln1) = layer_norm_backward(
        &d_ln1_out,
        &cache.ln1,
        &w1(params, &p("ln1.gain")).to_owned(),
    );
    add_grad(grads, &p("ln1.gain"), dg_ln1.into_dyn());
    add_grad(grads, &p("ln1.bias"), db_ln1.into_dyn());
    &d_x_mid + &unflat(d_x_ln, b, t)
}

// ── Encoder ───────────────────────────────────────────────────────────────────

/// Encode a batch into `[b, embedding_dim]` vectors.
///
/// With `normalize` each row is L2-normalized, the form the contrastive loss
/// consumes.
pub fn encode_batch<F: Real>(
    input: &BatchInput<F>,
    params: &ModelParams<F>,
    normalize: bool,
) -> Result<(Array2<F>, EncoderCache<F>)> {
    let cfg = &params.config;
    input.check(cfg)?;
    let (b, t, h, w) = input.rain.dim();

    let (pooled_terrain, terrain_cache) = conv_stack_forward(&input.terrain, params, "terrain");

    let rain_frames = input
        .rain
        .clone()
        .into_shape((b * t, 1, h, w))
        .expect("contiguous rain");
    let (pooled_rain, rain_cache) = conv_stack_forward(&rain_frames, params, "rain");
    let tokens_flat = linear_forward(
        &pooled_rain,
        &w2(params, "rain.token.weight").to_owned(),
        &w1(params, "rain.token.bias").to_owned(),
    );
    let mut tokens = unflat(tokens_flat, b, t);
    let pe = positional_encoding::<F>(cfg.seq_len, cfg.token_dim);
    for bi in 0..b {
        let mut sample = tokens.slice_mut(s![bi, .., ..]);
        sample += &pe;
    }

    let mut blocks = Vec::with_capacity(cfg.layers);
    let mut x = tokens;
    for layer in 0..cfg.layers {
        let (y, cache) = block_forward(&x, params, layer);
        blocks.push(cache);
        x = y;
    }
    let tokens_out = x;
    let rain_feat = temporal_mean_forward(&tokens_out);

    let emb_dim = cfg.embedding_dim();
    let mut emb_raw = Array2::zeros((b, emb_dim));
    emb_raw
        .slice_mut(s![.., ..cfg.token_dim])
        .assign(&rain_feat);
    emb_raw
        .slice_mut(s![.., cfg.token_dim..])
        .assign(&pooled_terrain);

    let (output, norms, normalized_emb) = if normalize {
        let mut norms = Array1::zeros(b);
        let mut z = emb_raw.clone();
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm.to_f64() < 1e-12 {
                return Err(Error::validation("cannot normalize a zero embedding"));
            }
            norms[i] = norm;
            row.mapv_inplace(|v| v / norm);
        }
        (z.clone(), Some(norms), Some(z))
    } else {
        (emb_raw.clone(), None, None)
    };

    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("encoder produced non-finite embedding"));
    }

    Ok((
        output,
        EncoderCache {
            shape: (b, t, h, w),
            terrain: terrain_cache,
            rain: rain_cache,
            pooled_rain,
            blocks,
            norms,
            normalized_emb,
        },
    ))
}

/// Backpropagate `d_emb` (gradient at the encoder output) into `grads`.
///
/// Returns `(d_rain, d_terrain)` when `compute_input_grads` is set.
pub fn encode_backward<F: Real>(
    d_emb: &Array2<F>,
    cache: &EncoderCache<F>,
    params: &ModelParams<F>,
    grads: &mut GradMap<F>,
    compute_input_grads: bool,
) -> (Option<Array4<F>>, Option<Array4<F>>) {
    let cfg = &params.config;
    let (b, t, h, w) = cache.shape;

    // undo normalization if the forward pass applied it
    let d_raw = match (&cache.norms, &cache.normalized_emb) {
        (Some(norms), Some(z)) => {
            let mut d = Array2::zeros(d_emb.raw_dim());
            for i in 0..b {
                let zi = z.row(i);
                let gi = d_emb.row(i);
                let dot = zi.dot(&gi);
                for j in 0..d_emb.dim().1 {
                    d[[i, j]] = (gi[j] - zi[j] * dot) / norms[i];
                }
            }
            d
        }
        _ => d_emb.clone(),
    };

    let d_rain_feat = d_raw.slice(s![.., ..cfg.token_dim]).to_owned();
    let d_terrain_feat = d_raw.slice(s![.., cfg.token_dim..]).to_owned();

    let d_terrain = conv_stack_backward(
        &d_terrain_feat,
        &cache.terrain,
        params,
        "terrain",
        grads,
        compute_input_grads,
    );

    let mut dx = temporal_mean_backward(&d_rain_feat, t);
    for layer in (0..cfg.layers).rev() {
        dx = block_backward(&dx, &cache.blocks[layer], params, layer, grads);
    }
    // positional encoding adds a constant: gradient passes through
    let (d_pooled_rain, dw_token, db_token) = linear_backward(
        &flat(&dx),
        &cache.pooled_rain,
        &w2(params, "rain.token.weight").to_owned(),
    );
    add_grad(grads, "rain.token.weight", dw_token.into_dyn());
    add_grad(grads, "rain.token.bias", db_token.into_dyn());
    let d_rain_frames = conv_stack_backward(
        &d_pooled_rain,
        &cache.rain,
        params,
        "rain",
        grads,
        compute_input_grads,
    );
    let d_rain = d_rain_frames.map(|d| {
        d.into_shape((b, t, h, w))
            .expect("contiguous rain gradient")
    });
    (d_rain, d_terrain)
}

// ── Head ──────────────────────────────────────────────────────────────────────

/// Landslide probability for each embedding row; probabilities lie in (0, 1).
pub fn predict_batch<F: Real>(
    emb: &Array2<F>,
    params: &ModelParams<F>,
) -> Result<(Array1<F>, HeadCache<F>)> {
    if emb.dim().1 != params.config.embedding_dim() {
        return Err(Error::validation(format!(
            "embedding width {} does not match head input {}",
            emb.dim().1,
            params.config.embedding_dim()
        )));
    }
    let pre1 = linear_forward(
        emb,
        &w2(params, "head.fc1.weight").to_owned(),
        &w1(params, "head.fc1.bias").to_owned(),
    );
    let act1 = relu_forward(&pre1);
    let logits = linear_forward(
        &act1,
        &w2(params, "head.fc2.weight").to_owned(),
        &w1(params, "head.fc2.bias").to_owned(),
    );
    let probs = Array1::from_shape_fn(emb.dim().0, |i| sigmoid(logits[[i, 0]]));
    Ok((
        probs.clone(),
        HeadCache { emb: emb.clone(), pre1, act1, probs },
    ))
}

/// Backward from `d_probs` (gradient at the probabilities) to the embedding.
pub fn head_backward<F: Real>(
    d_probs: &Array1<F>,
    cache: &HeadCache<F>,
    params: &ModelParams<F>,
    grads: &mut GradMap<F>,
) -> Array2<F> {
    let b = d_probs.len();
    let mut d_logits = Array2::zeros((b, 1));
    for i in 0..b {
        d_logits[[i, 0]] = sigmoid_backward(d_probs[i], cache.probs[i]);
    }
    let (d_act1, dw2, db2) = linear_backward(
        &d_logits,
        &cache.act1,
        &w2(params, "head.fc2.weight").to_owned(),
    );
    add_grad(grads, "head.fc2.weight", dw2.into_dyn());
    add_grad(grads, "head.fc2.bias", db2.into_dyn());
    let d_pre1 = relu_backward(&d_act1, &cache.pre1);
    let (d_emb, dw1, db1) = linear_backward(
        &d_pre1,
        &cache.emb,
        &w2(params, "head.fc1.weight").to_owned(),
    );
    add_grad(grads, "head.fc1.weight", dw1.into_dyn());
    add_grad(grads, "head.fc1.bias", db1.into_dyn());
    d_emb
}

// ── Single-sample conveniences ────────────────────────────────────────────────

/// Encode one `(rain [t, h, w], terrain [c, h, w])` pair.
pub fn encode_one<F: Real>(
    rain: &Array3<F>,
    terrain: &Array3<F>,
    params: &ModelParams<F>,
    normalize: bool,
) -> Result<Embedding<F>> {
    let (t, h, w) = rain.dim();
    let (c, _, _) = terrain.dim();
    let input = BatchInput {
        rain: rain.clone().into_shape((1, t, h, w)).expect("contiguous"),
        terrain: terrain.clone().into_shape((1, c, h, w)).expect("contiguous"),
    };
    let (emb, _) = encode_batch(&input, params, normalize)?;
    Embedding::new(emb.index_axis(Axis(0), 0).to_owned(), normalize)
}

/// Probability for one embedding.
pub fn predict_one<F: Real>(embedding: &Embedding<F>, params: &ModelParams<F>) -> Result<F> {
    let emb = embedding
        .z
        .clone()
        .into_shape((1, embedding.z.len()))
        .expect("contiguous");
    let (probs, _) = predict_batch(&emb, params)?;
    Ok(probs[0])
}
