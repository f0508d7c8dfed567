//! Training objectives. Every loss returns its value together with the
//! gradient with respect to its tensor inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("non-finite loss weights {self:?}")))
        }
    }
}

/// Statistic compared between the two feature branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Covariance,
    /// Covariance normalized to unit diagonal.
    Correlation,
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Shape(format!("label {l} out of {classes} classes")));
        }
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

/// Mean crossentropy and its gradient with respect to the probabilities.
pub fn crossentropy(pred: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    check_same(pred, labels, "crossentropy")?;
    let n = pred.rows() as f64;
    if n == 0.0 {
        return Err(Error::Shape("crossentropy of an empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, p), y) in grad.data_mut().iter_mut().zip(pred.data()).zip(labels.data()) {
        if *y != 0.0 {
            let q = p.clamp(PROB_FLOOR, 1.0);
            loss -= y * q.ln();
            // Gradient taken at the clamped value so saturated rows still train.
            *g = -y / (n * q);
        }
    }
    Ok((loss / n, grad))
}

/// Population covariance of the columns of an `N x T` feature matrix.
pub fn batch_self_covariance(features: &Tensor) -> Result<Tensor> {
    Ok(centered_cov(features)?.1)
}

fn centered_cov(h: &Tensor) -> Result<(Tensor, Tensor)> {
    if h.shape().len() != 2 || h.rows() < 2 {
        return Err(Error::Shape(format!("covariance needs N >= 2 rows, got {:?}", h.shape())));
    }
    let (n, t) = (h.rows(), h.shape()[1]);
    let mut mean = vec![0.0; t];
    for r in h.data().chunks(t) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = h.data().chunks(t).flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)).collect();
    let mut a = vec![0.0; t * t];
    for r in centered.chunks(t) {
        for i in 0..t {
            for j in i..t {
                a[i * t + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..t {
        for j in i..t {
            a[i * t + j] /= n as f64;
            a[j * t + i] = a[i * t + j];
        }
    }
    Ok((Tensor::new(vec![n, t], centered)?, Tensor::new(vec![t, t], a)?))
}

/// Normalizes a covariance to correlation; returns it with the diagonal scale.
fn correlation(a: &Tensor) -> (Tensor, Vec<f64>) {
    let t = a.shape()[0];
    let s: Vec<f64> = (0..t).map(|i| (a.at2(i, i) + 1e-8).sqrt()).collect();
    let mut c = a.clone();
    for i in 0..t {
        for j in 0..t {
            c.data_mut()[i * t + j] /= s[i] * s[j];
        }
    }
    (c, s)
}

/// Pulls a gradient on the correlation matrix back to the covariance.
fn correlation_backward(g: &Tensor, c: &Tensor, s: &[f64]) -> Tensor {
    let t = s.len();
    let mut out = Tensor::zeros(&[t, t]);
    let o = out.data_mut();
    for i in 0..t {
        for j in 0..t {
            o[i * t + j] = g.at2(i, j) / (s[i] * s[j]);
        }
    }
    for k in 0..t {
        let mut acc = 0.0;
        for j in 0..t {
            acc += g.at2(k, j) * c.at2(k, j) + g.at2(j, k) * c.at2(j, k);
        }
        o[k * t + k] -= acc / (2.0 * s[k] * s[k]);
    }
    out
}

/// Gradient on the features from a gradient `m` on their covariance.
fn covariance_backward(centered: &Tensor, m: &Tensor) -> Tensor {
    let (n, t) = (centered.rows(), centered.shape()[1]);
    let mut sym = vec![0.0; t * t];
    for i in 0..t {
        for j in 0..t {
            sym[i * t + j] = (m.at2(i, j) + m.at2(j, i)) / n as f64;
        }
    }
    let mut out = vec![0.0; n * t];
    for (o, r) in out.chunks_mut(t).zip(centered.data().chunks(t)) {
        for (i, ri) in r.iter().enumerate() {
            for (j, oj) in o.iter_mut().enumerate() {
                *oj += ri * sym[i * t + j];
            }
        }
    }
    Tensor::new(vec![n, t], out).expect("shape")
}

/// `-(1/T^2) sum (A_tx - A_rx)^2`, always nonpositive.
pub fn distance_loss(feat_tx: &Tensor, feat_rx: &Tensor) -> Result<f64> {
    Ok(distance_loss_with_grad(feat_tx, feat_rx, DistanceMetric::Covariance)?.0)
}

/// Distance loss and its gradients with respect to both feature batches.
pub fn distance_loss_with_grad(
    feat_tx: &Tensor,
    feat_rx: &Tensor,
    metric: DistanceMetric,
) -> Result<(f64, Tensor, Tensor)> {
    check_same(feat_tx, feat_rx, "distance loss")?;
    let (hc_tx, a_tx) = centered_cov(feat_tx)?;
    let (hc_rx, a_rx) = centered_cov(feat_rx)?;
    let t = a_tx.shape()[0];
    let scale = 1.0 / (t * t) as f64;
    let (m_tx, m_rx, loss) = match metric {
        DistanceMetric::Covariance => {
            let mut g = a_tx.clone();
            g.add_scaled(&a_rx, -1.0)?;
            let loss = -scale * g.data().iter().map(|d| d * d).sum::<f64>();
            g.scale(-2.0 * scale);
            let mut neg = g.clone();
            neg.scale(-1.0);
            (g, neg, loss)
        }
        DistanceMetric::Correlation => {
            let (c_tx, s_tx) = correlation(&a_tx);
            let (c_rx, s_rx) = correlation(&a_rx);
            let mut g = c_tx.clone();
            g.add_scaled(&c_rx, -1.0)?;
            let loss = -scale * g.data().iter().map(|d| d * d).sum::<f64>();
            g.scale(-2.0 * scale);
            let mut neg = g.clone();
            neg.scale(-1.0);
            (correlation_backward(&g, &c_tx, &s_tx), correlation_backward(&neg, &c_rx, &s_rx), loss)
        }
    };
    Ok((loss, covariance_backward(&hc_tx, &m_tx), covariance_backward(&hc_rx, &m_rx)))
}

pub fn sd_rxa_loss(l_tx: f64, l_rx: f64, l_dist: f64, w: &LossWeights) -> f64 {
    l_tx + w.alpha * l_rx + w.beta * l_dist
}

pub fn gan_rxa_fe_loss(l_disc: f64, l_tx: f64, w: &LossWeights) -> f64 {
    l_disc + w.gamma * l_tx
}

/// Relative frequency of each of `classes` labels.
pub fn occurrence_distribution(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Dataset("occurrence distribution of an empty set".into()));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Shape(format!("label {l} out of {classes} classes")))? += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / labels.len() as f64).collect())
}

/// `(1/(N C)) sum (exp((p - z)^2) - 1)` and its gradient on the probabilities.
pub fn discriminator_confusion_loss(pred: &Tensor, z: &[f64]) -> Result<(f64, Tensor)> {
    if pred.shape().len() != 2 || pred.shape()[1] != z.len() || pred.rows() == 0 {
        return Err(Error::Shape(format!("prediction {:?} vs {} classes", pred.shape(), z.len())));
    }
    let c = z.len();
    let norm = 1.0 / (pred.rows() * c) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for (i, (p, g)) in pred.data().iter().zip(grad.data_mut()).enumerate() {
        let d = p - z[i % c];
        let e = (d * d).exp();
        loss += e - 1.0;
        *g = norm * 2.0 * d * e;
    }
    Ok((loss * norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_probs(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(&[n, c]);
        for r in t.data_mut().chunks_mut(c) {
            r.iter_mut().for_each(|v| *v = rng.gen_range(0.05..1.0));
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
        }
        t
    }

    fn fd_check(x: &Tensor, grad: &Tensor, f: impl Fn(&Tensor) -> f64) {
        for i in 0..x.len() {
            let mut up = x.clone();
            up.data_mut()[i] += 1e-5;
            let mut down = x.clone();
            down.data_mut()[i] -= 1e-5;
            let fd = (f(&up) - f(&down)) / 2e-5;
            let g = grad.data()[i];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-3), "[{i}] {g} vs {fd}");
        }
    }

    #[test]
    fn crossentropy_examples() {
        let y = one_hot(&[0, 1], 2).unwrap();
        assert_eq!(crossentropy(&y, &y).unwrap().0, 0.0);
        let u = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let (l, _) = crossentropy(&u, &one_hot(&[1], 2).unwrap()).unwrap();
        assert!((l - 0.693147).abs() < 1e-6);
        assert!(crossentropy(&u, &one_hot(&[1, 0], 2).unwrap()).is_err());
    }

    #[test]
    fn crossentropy_matches_double_loop_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (n, c) = (rng.gen_range(1..=32), rng.gen_range(2..=16));
            let p = random_probs(n, c, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let y = one_hot(&labels, c).unwrap();
            let (l, g) = crossentropy(&p, &y).unwrap();
            let mut oracle = 0.0;
            for i in 0..n {
                for k in 0..c {
                    oracle -= y.at2(i, k) * p.at2(i, k).max(1e-12).ln();
                }
            }
            assert!((l - oracle / n as f64).abs() < 1e-9);
            fd_check(&p, &g, |q| crossentropy(q, &y).unwrap().0);
        }
    }

    fn covariance_oracle(h: &Tensor) -> Vec<f64> {
        let (n, t) = (h.rows(), h.shape()[1]);
        let mean: Vec<f64> = (0..t).map(|j| (0..n).map(|i| h.at2(i, j)).sum::<f64>() / n as f64).collect();
        let mut a = vec![0.0; t * t];
        for p in 0..t {
            for q in 0..t {
                for i in 0..n {
                    a[p * t + q] += (h.at2(i, p) - mean[p]) * (h.at2(i, q) - mean[q]);
                }
                a[p * t + q] /= n as f64;
            }
        }
        a
    }

    #[test]
    fn covariance_examples_and_oracle() {
        let constant = Tensor::filled(&[4, 3], 2.5);
        assert!(batch_self_covariance(&constant).unwrap().data().iter().all(|v| *v == 0.0));
        let pm = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(batch_self_covariance(&pm).unwrap().data(), &[1.0]);
        assert!(batch_self_covariance(&Tensor::zeros(&[1, 3])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let h = random(&[rng.gen_range(2..=32), rng.gen_range(1..=16)], &mut rng);
            let a = batch_self_covariance(&h).unwrap();
            for (x, y) in a.data().iter().zip(covariance_oracle(&h)) {
                assert!((x - y).abs() < 1e-9);
            }
            let t = a.shape()[0];
            for i in 0..t {
                for j in 0..t {
                    assert_eq!(a.at2(i, j), a.at2(j, i));
                }
            }
        }
    }

    #[test]
    fn distance_loss_examples() {
        let tx = Tensor::new(vec![2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let rx = Tensor::zeros(&[2, 2]);
        assert_eq!(distance_loss(&tx, &rx).unwrap(), -0.25);
        assert_eq!(distance_loss(&tx, &tx).unwrap(), 0.0);
        assert!(distance_loss(&tx, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn distance_loss_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for metric in [DistanceMetric::Covariance, DistanceMetric::Correlation] {
            for _ in 0..10 {
                let (n, t) = (rng.gen_range(2..=8), rng.gen_range(1..=5));
                let a = random(&[n, t], &mut rng);
                let b = random(&[n, t], &mut rng);
                let (l, ga, gb) = distance_loss_with_grad(&a, &b, metric).unwrap();
                assert!(l <= 0.0);
                fd_check(&a, &ga, |x| distance_loss_with_grad(x, &b, metric).unwrap().0);
                fd_check(&b, &gb, |x| distance_loss_with_grad(&a, x, metric).unwrap().0);
            }
        }
    }

    #[test]
    fn correlation_variant_ignores_feature_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&[6, 3], &mut rng);
        let b = random(&[6, 3], &mut rng);
        let mut a2 = a.clone();
        a2.scale(7.0);
        let l1 = distance_loss_with_grad(&a, &b, DistanceMetric::Correlation).unwrap().0;
        let l2 = distance_loss_with_grad(&a2, &b, DistanceMetric::Correlation).unwrap().0;
        assert!((l1 - l2).abs() < 1e-6);
    }

    #[test]
    fn combined_losses() {
        let w = LossWeights::default();
        assert_eq!(sd_rxa_loss(1.0, 0.5, -0.25, &w), 1.25);
        let zero = LossWeights { alpha: 0.0, beta: 0.0, ..w };
        assert_eq!(sd_rxa_loss(1.0, 0.5, -0.25, &zero), 1.0);
        assert!((gan_rxa_fe_loss(0.284, 0.693, &w) - 0.977).abs() < 1e-12);
        assert_eq!(gan_rxa_fe_loss(0.284, 0.693, &LossWeights { gamma: 0.0, ..w }), 0.284);
        assert_eq!(w.gamma, 1.0);
    }

    #[test]
    fn occurrence_examples() {
        assert_eq!(occurrence_distribution(&[0, 1, 1, 0], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(occurrence_distribution(&[0, 0, 1, 0], 2).unwrap(), vec![0.75, 0.25]);
        assert!(occurrence_distribution(&[], 2).is_err());
        let z = occurrence_distribution(&[0, 2, 2, 1, 2, 0, 1], 3).unwrap();
        assert_eq!(z.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn confusion_loss_examples_and_fd() {
        let z = [0.5, 0.5];
        let at_z = Tensor::new(vec![2, 2], vec![0.5; 4]).unwrap();
        assert_eq!(discriminator_confusion_loss(&at_z, &z).unwrap().0, 0.0);
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let (l, _) = discriminator_confusion_loss(&p, &z).unwrap();
        assert!((l - 0.284025).abs() < 1e-6);
        assert!(discriminator_confusion_loss(&p, &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (n, c) = (rng.gen_range(1..=32), rng.gen_range(2..=8));
            let p = random_probs(n, c, &mut rng);
            let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..c)).collect();
            let z = occurrence_distribution(&labels, c).unwrap();
            let (l, g) = discriminator_confusion_loss(&p, &z).unwrap();
            let mut oracle = 0.0;
            for i in 0..n {
                for k in 0..c {
                    oracle += ((p.at2(i, k) - z[k]).powi(2)).exp() - 1.0;
                }
            }
            assert!((l - oracle / (n * c) as f64).abs() < 1e-9);
            assert!(l >= 0.0);
            fd_check(&p, &g, |q| discriminator_confusion_loss(q, &z).unwrap().0);
        }
    }
}
