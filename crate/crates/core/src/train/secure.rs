//! DPSGD over secret shares.

use super::{step_factor_raw, ClipScale, Dataset, DpsgdConfig, TrainError};
use crate::dp::{distributed_gaussian, NoiseSpec};
use crate::invsqrt::inverse_sqrt;
use crate::mpc::{MpcError, OpenPurpose, Party, TruncMode};
use crate::numeric::FieldElement;

/// Tap label for the reconstructed minibatch rows of each step.
pub const BATCH_LABEL: &str = "train.batch";
/// Tap label for the summed noise vector of each step.
pub const NOISE_LABEL: &str = "train.noise";
/// Tap label for the model after each step.
pub const MODEL_LABEL: &str = "train.model";

/// Called after every step with the step index and the current model shares.
pub type ProgressFn<'a> = dyn FnMut(&mut Party, u64, &[FieldElement]) -> Result<(), MpcError> + 'a;

/// Shared rows `[x (fixed point) | one-hot(y) (integers)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedData {
    pub rows: Vec<FieldElement>,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
}

impl SharedData {
    pub fn width(&self) -> usize {
        self.dim + self.classes
    }

    fn split(&self) -> (Vec<FieldElement>, Vec<FieldElement>) {
        split_rows(&self.rows, self.dim, self.classes)
    }
}

fn split_rows(rows: &[FieldElement], dim: usize, classes: usize) -> (Vec<FieldElement>, Vec<FieldElement>) {
    let w = dim + classes;
    let n = rows.len() / w;
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n * classes);
    for r in rows.chunks(w) {
        x.extend_from_slice(&r[..dim]);
        y.extend_from_slice(&r[dim..]);
    }
    (x, y)
}

/// Shares one party's dataset; the others pass `None` and the public size.
pub fn share_dataset(
    party: &mut Party,
    owner: usize,
    data: Option<&Dataset>,
    n: usize,
    dim: usize,
    classes: usize,
) -> Result<SharedData, TrainError> {
    let fp = *party.fp();
    let encoded = match data {
        Some(d) if party.id() == owner => {
            if d.len() != n || d.dim != dim || d.classes != classes {
                return Err(TrainError::Config("dataset does not match the announced shape".into()));
            }
            Some(d.encode_rows(&fp)?)
        }
        _ => None,
    };
    let rows = party.input(owner, encoded.as_deref(), n * (dim + classes))?;
    Ok(SharedData { rows, n, dim, classes })
}

/// Every party contributes its rows (public sizes `counts`, in party order);
/// the result is the concatenation in party order (one round).
pub fn share_datasets(party: &mut Party, mine: &Dataset, counts: &[usize]) -> Result<SharedData, TrainError> {
    if counts.len() != party.parties() || counts[party.id()] != mine.len() {
        return Err(TrainError::Config("row counts do not match the local dataset".into()));
    }
    let fp = *party.fp();
    let w = mine.dim + mine.classes;
    let lens: Vec<usize> = counts.iter().map(|c| c * w).collect();
    let parts = party.input_all(&mine.encode_rows(&fp)?, &lens)?;
    Ok(SharedData { rows: parts.concat(), n: counts.iter().sum(), dim: mine.dim, classes: mine.classes })
}

/// Scores `X W + b` for `n` rows (one multiplication and one truncation).
pub fn secure_scores(
    party: &mut Party,
    x: &[FieldElement],
    theta: &[FieldElement],
    dim: usize,
    classes: usize,
) -> Result<Vec<FieldElement>, MpcError> {
    if x.len() % dim != 0 || theta.len() != (dim + 1) * classes {
        return Err(MpcError::Shape(format!("{} features, {} parameters for {dim}x{classes}", x.len(), theta.len())));
    }
    let n = x.len() / dim;
    let m = party.modulus();
    let f = party.fp().params.f;
    let mut xs = Vec::with_capacity(n * dim * classes);
    let mut ws = Vec::with_capacity(n * dim * classes);
    for s in 0..n {
        for j in 0..classes {
            for i in 0..dim {
                xs.push(x[s * dim + i]);
                ws.push(theta[i * classes + j]);
            }
        }
    }
    let prod = party.mul(&xs, &ws)?;
    let sums: Vec<_> = prod.chunks(dim).map(|c| m.sum(c.iter().copied())).collect();
    let u = party.trunc(&sums, f, TruncMode::NearestRandom)?;
    let bias = &theta[dim * classes..];
    Ok(u.iter().enumerate().map(|(i, v)| m.add(*v, bias[i % classes])).collect())
}

/// Piecewise sigmoid of the scores, from two comparisons against `-1/2` and `1/2`.
pub fn secure_forward(
    party: &mut Party,
    x: &[FieldElement],
    theta: &[FieldElement],
    dim: usize,
    classes: usize,
) -> Result<Vec<FieldElement>, MpcError> {
    let u = secure_scores(party, x, theta, dim, classes)?;
    let fp = *party.fp();
    let m = fp.modulus;
    let n = u.len();
    let half = fp.encode(0.5)?;
    let mut lhs = u.clone();
    lhs.extend_from_slice(&u);
    let mut rhs = party.public_const(m.neg(half), n);
    rhs.extend(party.public_const(half, n));
    // lo = [u <= -1/2], hi = [u <= 1/2]
    let cmp = party.comparison(&lhs, &rhs)?;
    let (lo, hi) = cmp.split_at(n);
    let mid = party.sub(hi, lo)?;
    let lin = party.add_const(&u, half);
    let t = party.mul(&mid, &lin)?;
    let one = fp.encode(1.0)?;
    let above = party.add_const(&party.neg(&party.mul_public(hi, one)), one);
    party.add(&t, &above)
}

/// Per-sample gradients, one row of `(dim + 1) * classes` values per sample.
/// `y` holds one-hot labels at integer scale.
pub fn per_sample_gradients(
    party: &mut Party,
    x: &[FieldElement],
    y: &[FieldElement],
    y_hat: &[FieldElement],
    dim: usize,
    classes: usize,
) -> Result<Vec<FieldElement>, MpcError> {
    let n = y.len() / classes;
    if x.len() != n * dim || y_hat.len() != y.len() {
        return Err(MpcError::Shape("features, labels and predictions disagree".into()));
    }
    let fp = *party.fp();
    let f = fp.params.f;
    let y_fixed = party.mul_public(y, fp.from_raw(1i128 << f));
    let r = party.sub(y_hat, &y_fixed)?;
    let mut xs = Vec::with_capacity(n * dim * classes);
    let mut rs = Vec::with_capacity(n * dim * classes);
    for s in 0..n {
        for i in 0..dim {
            for j in 0..classes {
                xs.push(x[s * dim + i]);
                rs.push(r[s * classes + j]);
            }
        }
    }
    let prod = party.mul(&xs, &rs)?;
    let gw = party.trunc(&prod, f, TruncMode::NearestRandom)?;
    let p = (dim + 1) * classes;
    let mut g = Vec::with_capacity(n * p);
    for s in 0..n {
        g.extend_from_slice(&gw[s * dim * classes..(s + 1) * dim * classes]);
        g.extend_from_slice(&r[s * classes..(s + 1) * classes]);
    }
    Ok(g)
}

/// Scales each row of `g` (width `p`) to norm at most `clip`:
/// `g' = g + [scale <= 1] (g * scale - g)` with `scale = C / ||g||` from the
/// one-sided inverse square root of `||g||^2 + 2^-f`.
pub fn clip_gradients(party: &mut Party, g: &[FieldElement], p: usize, clip: f64) -> Result<Vec<FieldElement>, TrainError> {
    if p == 0 || g.len() % p != 0 {
        return Err(MpcError::Shape(format!("{} values in rows of {p}", g.len())).into());
    }
    let n = g.len() / p;
    let fp = *party.fp();
    let m = fp.modulus;
    let f = fp.params.f;
    let sq = party.mul(g, g)?;
    let norms: Vec<_> = sq.chunks(p).map(|c| m.sum(c.iter().copied())).collect();
    let norms = party.trunc(&norms, f, TruncMode::NearestRandom)?;
    // one extra unit keeps zero gradients inside the inverse square root domain
    let norms = party.add_const(&norms, FieldElement::ONE);
    let inv = inverse_sqrt(party, &norms)?;
    let scale = match ClipScale::new(&fp, clip)? {
        ClipScale::Integer(c) => party.mul_public(&inv, fp.from_raw(c)),
        ClipScale::Fixed(c) => {
            let t = party.mul_public(&inv, fp.from_raw(c));
            party.trunc(&t, f, TruncMode::Floor)?
        }
    };
    let one = party.public_const(fp.encode(1.0)?, n);
    let is_clip = party.comparison(&scale, &one)?;
    let wide_scale: Vec<_> = (0..n * p).map(|i| scale[i / p]).collect();
    let scaled = party.mul(g, &wide_scale)?;
    let scaled = party.trunc(&scaled, f, TruncMode::NearestRandom)?;
    let diff = party.sub(&scaled, g)?;
    let wide_clip: Vec<_> = (0..n * p).map(|i| is_clip[i / p]).collect();
    let t = party.mul(&wide_clip, &diff)?;
    Ok(party.add(g, &t)?)
}

/// Walks through one oblivious shuffle of the data per epoch in sequential
/// slices of `batch` rows; the last slice of an epoch may be shorter.
pub struct MinibatchSampler {
    batch: usize,
    shuffled: Vec<FieldElement>,
    pos: usize,
    epochs: u64,
}

impl MinibatchSampler {
    pub fn new(batch: usize) -> Self {
        MinibatchSampler { batch: batch.max(1), shuffled: Vec::new(), pos: 0, epochs: 0 }
    }

    pub fn epochs(&self) -> u64 {
        self.epochs
    }

    /// Next minibatch rows and their count.
    pub fn next(&mut self, party: &mut Party, data: &SharedData) -> Result<(Vec<FieldElement>, usize), MpcError> {
        if data.n == 0 {
            return Err(MpcError::Shape("empty dataset".into()));
        }
        let w = data.width();
        if self.shuffled.is_empty() || self.pos >= data.n {
            self.shuffled = party.oblivious_shuffle(&data.rows, w)?;
            self.pos = 0;
            self.epochs += 1;
        }
        let take = self.batch.min(data.n - self.pos);
        let rows = self.shuffled[self.pos * w..(self.pos + take) * w].to_vec();
        self.pos += take;
        Ok((rows, take))
    }
}

/// Secure DPSGD from `init`; returns the final model shares. No value derived
/// from the model is opened.
pub fn secure_dpsgd(
    party: &mut Party,
    data: &SharedData,
    init: &[FieldElement],
    cfg: &DpsgdConfig,
    mut progress: Option<&mut ProgressFn>,
) -> Result<Vec<FieldElement>, TrainError> {
    cfg.validate()?;
    let (dim, classes) = (data.dim, data.classes);
    let p = (dim + 1) * classes;
    if init.len() != p {
        return Err(TrainError::Config(format!("initial model has {} parameters, expected {p}", init.len())));
    }
    let sigma = cfg.sigma()?;
    let fp = *party.fp();
    let m = fp.modulus;
    let f = fp.params.f;
    let mut theta = init.to_vec();
    let mut sampler = MinibatchSampler::new(cfg.batch);
    for t in 0..cfg.iterations {
        let (rows, b) = sampler.next(party, data)?;
        party.observe(BATCH_LABEL, b as u64, &rows);
        let (x, y) = split_rows(&rows, dim, classes);
        let y_hat = secure_forward(party, &x, &theta, dim, classes)?;
        let mut g = per_sample_gradients(party, &x, &y, &y_hat, dim, classes)?;
        if cfg.is_private() {
            g = clip_gradients(party, &g, p, cfg.clip)?;
        }
        let mut total: Vec<_> = (0..p).map(|k| m.sum((0..b).map(|s| g[s * p + k]))).collect();
        if cfg.is_private() {
            let spec = NoiseSpec { sigma, dim: p, parties: party.parties() };
            let noise = distributed_gaussian(party, &spec)?;
            party.observe(NOISE_LABEL, t, &noise);
            total = party.add(&total, &noise)?;
        }
        let factor = step_factor_raw(&fp, cfg.lr.rate(t, cfg.iterations), b)?;
        let upd = party.mul_public(&total, fp.from_raw(factor));
        let upd = party.trunc(&upd, f, TruncMode::NearestRandom)?;
        theta = party.sub(&theta, &upd)?;
        party.observe(MODEL_LABEL, t, &theta);
        if let Some(cb) = progress.as_deref_mut() {
            cb(party, t, &theta)?;
        }
    }
    Ok(theta)
}

/// Element-wise mean of shared models: sum, multiply by `round(2^f / m)`,
/// floor-truncate.
pub fn aggregate_average(party: &mut Party, models: &[Vec<FieldElement>]) -> Result<Vec<FieldElement>, TrainError> {
    let first = models.first().ok_or_else(|| TrainError::Config("nothing to average".into()))?;
    if models.iter().any(|v| v.len() != first.len()) {
        return Err(MpcError::Shape("models of different sizes".into()).into());
    }
    let fp = *party.fp();
    let m = fp.modulus;
    let f = fp.params.f;
    let count = models.len() as i128;
    let inv = ((1i128 << f) + count / 2) / count;
    let sum: Vec<_> = (0..first.len()).map(|i| m.sum(models.iter().map(|v| v[i]))).collect();
    let scaled = party.mul_public(&sum, fp.from_raw(inv));
    Ok(party.trunc(&scaled, f, TruncMode::Floor)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Test accuracy of a shared model; only the number of correct predictions
/// is opened. Ties in the argmax go to the lower class index.
pub fn secure_evaluate(party: &mut Party, theta: &[FieldElement], data: &SharedData) -> Result<Accuracy, TrainError> {
    let (dim, classes, n) = (data.dim, data.classes, data.n);
    if n == 0 {
        return Ok(Accuracy { correct: 0, total: 0 });
    }
    let m = party.modulus();
    let (x, y) = data.split();
    let u = secure_scores(party, &x, theta, dim, classes)?;
    let col = |j: usize| -> Vec<FieldElement> { (0..n).map(|s| u[s * classes + j]).collect() };
    let mut best = col(0);
    let mut onehot: Vec<Vec<FieldElement>> = vec![party.public_const(FieldElement::ONE, n)];
    for j in 1..classes {
        let uj = col(j);
        let le = party.comparison(&uj, &best)?;
        let wins = party.add_const(&party.neg(&le), FieldElement::ONE);
        let diff = party.sub(&uj, &best)?;
        let mut pairs: Vec<(&[FieldElement], &[FieldElement])> = vec![(&wins, &diff)];
        for o in &onehot {
            pairs.push((&wins, o));
        }
        let prods = party.mul_many(&pairs)?;
        best = party.add(&best, &prods[0])?;
        for (o, d) in onehot.iter_mut().zip(&prods[1..]) {
            *o = party.sub(o, d)?;
        }
        onehot.push(wins);
    }
    let mut pred = Vec::with_capacity(n * classes);
    for s in 0..n {
        for o in &onehot {
            pred.push(o[s]);
        }
    }
    let hits = party.mul(&pred, &y)?;
    let correct = m.sum(hits);
    let opened = party.open(&[correct], OpenPurpose::Accuracy)?;
    let correct = m.lift(opened[0]);
    if correct < 0 || correct as usize > n {
        return Err(MpcError::Domain(format!("opened accuracy count {correct} out of range")).into());
    }
    Ok(Accuracy { correct: correct as u64, total: n as u64 })
}
