//! Training objectives: logistic tracking loss, triplet and N-pair metric
//! losses, cross-entropy identification loss, and their weighted sum.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Which metric-learning term fills the `λ₁` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricLoss {
    NPair,
    Triplet,
}

impl std::str::FromStr for MetricLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npair" => Ok(MetricLoss::NPair),
            "triplet" => Ok(MetricLoss::Triplet),
            _ => Err(Error::Config(format!("metric loss must be npair or triplet, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for MetricLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricLoss::NPair => "npair",
            MetricLoss::Triplet => "triplet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub metric: MetricLoss,
    pub lambda1: f64,
    pub lambda2: f64,
    pub margin: f64,
    /// Positive-label radius in instance pixels.
    pub label_radius: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            metric: MetricLoss::NPair,
            lambda1: 0.1,
            lambda2: 0.1,
            margin: 0.5,
            label_radius: 16.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("loss.margin must be positive".into()));
        }
        if !(self.label_radius > 0.0) {
            return Err(Error::Config("loss.label_radius must be positive".into()));
        }
        Ok(())
    }
}

/// `+1` within `radius` pixels of the map center, `-1` elsewhere.
pub fn make_label_map(map_side: usize, stride: usize, radius: f64) -> Tensor {
    let c = (map_side as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(map_side * map_side);
    for i in 0..map_side {
        for j in 0..map_side {
            let dy = (i as f64 - c) * stride as f64;
            let dx = (j as f64 - c) * stride as f64;
            data.push(if dx.hypot(dy) <= radius { 1.0 } else { -1.0 });
        }
    }
    Tensor::new(&[map_side, map_side], data).expect("square map")
}

/// Mean of `log(1 + exp(-v·y))` over positions.
pub fn sot_loss<'t>(v: Var<'t>, y: &Tensor) -> Result<Var<'t>> {
    if v.shape() != y.shape() {
        return Err(Error::Shape {
            op: "sot_loss",
            left: v.shape(),
            right: y.shape().to_vec(),
        });
    }
    let y = v.tape().constant(y.clone());
    Ok(v.mul(y)?.neg().softplus().mean())
}

fn check_batch(op: &str, wz: &[Var<'_>], wx: &[Var<'_>]) -> Result<()> {
    if wz.len() != wx.len() {
        return Err(Error::contract(format!(
            "{op}: {} anchors but {} positives",
            wz.len(),
            wx.len()
        )));
    }
    if wz.len() < 2 {
        return Err(Error::contract(format!("{op} needs at least 2 pairs, got {}", wz.len())));
    }
    Ok(())
}

fn sq_dist<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let d = a.sub(b)?;
    d.dot(d)
}

fn mean_of<'t>(tape: &'t Tape, terms: &[Var<'t>]) -> Result<Var<'t>> {
    Ok(tape.stack(terms)?.mean())
}

/// Batch-all triplet loss; negatives for anchor `i` are the positives of
/// every other pair. Normalized by the number of anchors.
pub fn triplet_loss<'t>(wz: &[Var<'t>], wx: &[Var<'t>], margin: f64) -> Result<Var<'t>> {
    check_batch("triplet_loss", wz, wx)?;
    let tape = wz[0].tape();
    let n = wz.len();
    let mut terms = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        let pos = sq_dist(wz[i], wx[i])?;
        for j in (0..n).filter(|&j| j != i) {
            let neg = sq_dist(wz[i], wx[j])?;
            terms.push(pos.sub(neg)?.add_scalar(tape.scalar(margin))?.relu());
        }
    }
    // sum over (i, j≠i) divided by n
    Ok(tape.stack(&terms)?.sum().scale(1.0 / n as f64))
}

/// `(1/N) Σ_i log(1 + Σ_{j≠i} exp(s_ij − s_ii))` with `s_ij = w_ziᵀ w_xj`,
/// evaluated as the cross-entropy of row `i` of the similarity matrix.
pub fn npair_loss<'t>(wz: &[Var<'t>], wx: &[Var<'t>]) -> Result<Var<'t>> {
    check_batch("npair_loss", wz, wx)?;
    let tape = wz[0].tape();
    let mut terms = Vec::with_capacity(wz.len());
    for (i, z) in wz.iter().enumerate() {
        let sims = wx.iter().map(|x| z.dot(*x)).collect::<Result<Vec<_>>>()?;
        let row = tape.stack(&sims)?;
        terms.push(row.log_softmax()?.select(i)?.neg());
    }
    mean_of(tape, &terms)
}

/// Cross-entropy of the true identity for both exemplar and instance logits.
pub fn iden_loss<'t>(logits_z: &[Var<'t>], logits_x: &[Var<'t>], labels: &[usize]) -> Result<Var<'t>> {
    if logits_z.len() != labels.len() || logits_x.len() != labels.len() || labels.is_empty() {
        return Err(Error::contract(format!(
            "iden_loss: {} exemplar logits, {} instance logits, {} labels",
            logits_z.len(),
            logits_x.len(),
            labels.len()
        )));
    }
    let tape = logits_z[0].tape();
    let mut terms = Vec::with_capacity(2 * labels.len());
    for (set, name) in [(logits_z, "exemplar"), (logits_x, "instance")] {
        let mut half = Vec::with_capacity(labels.len());
        for (l, &y) in set.iter().zip(labels) {
            if y >= l.numel() {
                return Err(Error::contract(format!(
                    "iden_loss: {name} label {y} out of range for {} identities",
                    l.numel()
                )));
            }
            half.push(l.log_softmax()?.select(y)?);
        }
        terms.push(mean_of(tape, &half)?.neg());
    }
    terms[0].add(terms[1])
}

/// `L_sot + λ₁·L_npair + λ₂·L_iden`.
pub fn total_loss<'t>(l_sot: Var<'t>, l_npair: Var<'t>, l_iden: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    for (v, name) in [(l_sot, "L_sot"), (l_npair, "L_npair"), (l_iden, "L_iden")] {
        if !v.item().is_finite() {
            return Err(Error::NonFinite(format!("{name} = {}", v.item())));
        }
    }
    l_sot.add(l_npair.scale(cfg.lambda1))?.add(l_iden.scale(cfg.lambda2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn consts<'t>(tape: &'t Tape, vs: &[Vec<f64>]) -> Vec<Var<'t>> {
        vs.iter().map(|v| tape.constant(Tensor::vector(v.clone()))).collect()
    }

    fn dotv(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn label_map_disk() {
        let y = make_label_map(17, 8, 16.0);
        assert_eq!(y.data().iter().filter(|&&v| v == 1.0).count(), 13);
        let all = make_label_map(5, 8, 100.0);
        assert!(all.data().iter().all(|&v| v == 1.0));
        let one = make_label_map(5, 8, 7.9);
        assert_eq!(one.data().iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(one.at(&[2, 2]), 1.0);
    }

    #[test]
    fn sot_loss_values() {
        let tape = Tape::new();
        let y = make_label_map(5, 4, 4.0);
        let v = tape.constant(Tensor::zeros(&[5, 5]));
        assert!((sot_loss(v, &y).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        let big = Tensor::new(&[5, 5], y.data().iter().map(|t| 50.0 * t).collect()).unwrap();
        assert!(sot_loss(tape.constant(big), &y).unwrap().item() < 1e-20);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vv: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
        let yy: Vec<f64> = (0..9).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let want = vv.iter().zip(&yy).map(|(v, y)| (1.0 + (-v * y).exp()).ln()).sum::<f64>() / 9.0;
        let got = sot_loss(
            tape.constant(Tensor::new(&[3, 3], vv).unwrap()),
            &Tensor::new(&[3, 3], yy).unwrap(),
        )
        .unwrap()
        .item();
        assert!((got - want).abs() < 1e-12);
        assert!(sot_loss(tape.constant(Tensor::zeros(&[3, 3])), &y).is_err());
    }

    #[test]
    fn sot_loss_decreases_along_labels() {
        let tape = Tape::new();
        let y = make_label_map(5, 4, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = sot_loss(tape.constant(Tensor::new(&[5, 5], v.clone()).unwrap()), &y)
            .unwrap()
            .item();
        for p in 0..25 {
            let mut w = v.clone();
            w[p] += 0.1 * y.data()[p];
            let l = sot_loss(tape.constant(Tensor::new(&[5, 5], w).unwrap()), &y).unwrap().item();
            assert!(l < base);
        }
    }

    #[test]
    fn triplet_values() {
        let tape = Tape::new();
        let same = vec![vec![0.6, 0.8]; 4];
        let l = triplet_loss(&consts(&tape, &same), &consts(&tape, &same), 0.5).unwrap();
        assert!((l.item() - 3.0 * 0.5).abs() < 1e-12);

        let z = consts(&tape, &[vec![0.0, 0.0], vec![1e3, 0.0]]);
        let x = consts(&tape, &[vec![0.0, 0.0], vec![1e3, 0.0]]);
        assert_eq!(triplet_loss(&z, &x, 0.5).unwrap().item(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zs: Vec<_> = (0..3).map(|_| unit(&mut rng, 4)).collect();
        let xs: Vec<_> = (0..3).map(|_| unit(&mut rng, 4)).collect();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    want += (d(&zs[i], &xs[i]) - d(&zs[i], &xs[j]) + 0.5).max(0.0);
                }
            }
        }
        want /= 3.0;
        let got = triplet_loss(&consts(&tape, &zs), &consts(&tape, &xs), 0.5).unwrap().item();
        assert!((got - want).abs() < 1e-12);
        assert!(triplet_loss(&consts(&tape, &zs[..1]), &consts(&tape, &xs[..1]), 0.5).is_err());
    }

    #[test]
    fn npair_values() {
        let tape = Tape::new();
        let same = vec![vec![1.0, 0.0, 0.0]; 8];
        let l = npair_loss(&consts(&tape, &same), &consts(&tape, &same)).unwrap().item();
        assert!((l - 8f64.ln()).abs() < 1e-12);

        let z = consts(&tape, &[vec![40.0, 0.0], vec![0.0, 40.0]]);
        let x = consts(&tape, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(npair_loss(&z, &x).unwrap().item() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<_> = (0..4).map(|_| unit(&mut rng, 5)).collect();
        let xs: Vec<_> = (0..4).map(|_| unit(&mut rng, 5)).collect();
        let mut want = 0.0;
        for i in 0..4 {
            let sii = dotv(&zs[i], &xs[i]);
            let s: f64 = (0..4).filter(|&j| j != i).map(|j| (dotv(&zs[i], &xs[j]) - sii).exp()).sum();
            want += (1.0 + s).ln();
        }
        want /= 4.0;
        let got = npair_loss(&consts(&tape, &zs), &consts(&tape, &xs)).unwrap().item();
        assert!((got - want).abs() < 1e-12);
        assert!(got >= 0.0);
        assert!(npair_loss(&consts(&tape, &zs[..1]), &consts(&tape, &xs[..1])).is_err());
    }

    #[test]
    fn iden_values() {
        let tape = Tape::new();
        let uni = vec![vec![0.3; 20]; 3];
        let l = iden_loss(&consts(&tape, &uni), &consts(&tape, &uni), &[0, 5, 19]).unwrap();
        assert!((l.item() - 2.0 * 20f64.ln()).abs() < 1e-12);

        let mut sure = vec![0.0; 5];
        sure[2] = 60.0;
        let s = consts(&tape, &[sure]);
        assert!(iden_loss(&s, &s, &[2]).unwrap().item() < 1e-20);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lz: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let lx: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = [4, 0, 2];
        let logp = |l: &[f64], y: usize| l[y] - l.iter().map(|v| v.exp()).sum::<f64>().ln();
        let want = -(labels.iter().enumerate().map(|(i, &y)| logp(&lz[i], y)).sum::<f64>() / 3.0)
            - labels.iter().enumerate().map(|(i, &y)| logp(&lx[i], y)).sum::<f64>() / 3.0;
        let got = iden_loss(&consts(&tape, &lz), &consts(&tape, &lx), &labels).unwrap().item();
        assert!((got - want).abs() < 1e-12);
        assert!(iden_loss(&consts(&tape, &lz), &consts(&tape, &lx), &[0, 5, 1]).is_err());
    }

    #[test]
    fn total_values() {
        let tape = Tape::new();
        let (a, b, c) = (tape.scalar(1.0), tape.scalar(2.0), tape.scalar(3.0));
        let cfg = LossConfig::default();
        assert!((total_loss(a, b, c, &cfg).unwrap().item() - 1.5).abs() < 1e-15);
        let off = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(a, b, c, &off).unwrap().item(), 1.0);
        let nan = tape.scalar(f64::NAN);
        let msg = total_loss(a, nan, c, &cfg).unwrap_err().to_string();
        assert!(msg.contains("L_npair"), "{msg}");
    }
}
