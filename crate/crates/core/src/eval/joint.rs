use rand::Rng;
use rand_distr::Exp1;

use crate::context::{ContextWindow, ExactJointScorer};
use crate::corpus::{PriorModel, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::mechanism::Channel;

const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Finite joint `Pr(x)·Pr(y|x)·Pr(c|x,y)` over input, output and context
/// alphabets. Tokens are named `x{i}`, `y{j}` and `c{k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    pub px: Vec<f64>,
    /// `channel[x][y] = Pr(y|x)`.
    pub channel: Vec<Vec<f64>>,
    /// `pc[x][y][c] = Pr(c|x,y)`.
    pub pc: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(format!("{what} is not a distribution")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Config(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn random_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let keep = rng.random_range(0..n);
    let mut w: Vec<f64> = (0..n)
        .map(|i| if i != keep && rng.random::<f64>() < sparsity { 0.0 } else { rng.sample::<f64, _>(Exp1) })
        .collect();
    if w[keep] == 0.0 {
        w[keep] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

impl JointDistribution {
    pub fn new(px: Vec<f64>, channel: Vec<Vec<f64>>, pc: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        check_distribution(&px, "Pr(X)")?;
        let ny = channel.first().map_or(0, Vec::len);
        let nc = pc.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if channel.len() != px.len() || pc.len() != px.len() {
            return Err(Error::Config("joint alphabets disagree on |X|".into()));
        }
        for (x, row) in channel.iter().enumerate() {
            if row.len() != ny {
                return Err(Error::Config("ragged channel".into()));
            }
            check_distribution(row, &format!("Pr(Y|x{x})"))?;
            if pc[x].len() != ny {
                return Err(Error::Config("context table disagrees on |Y|".into()));
            }
            for (y, cs) in pc[x].iter().enumerate() {
                if cs.len() != nc {
                    return Err(Error::Config("ragged context table".into()));
                }
                check_distribution(cs, &format!("Pr(C|x{x},y{y})"))?;
            }
        }
        Ok(JointDistribution { px, channel, pc })
    }

    /// Random joint with exponential weights; roughly a fifth of the channel
    /// and context entries are zeroed to exercise unreachable outcomes.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, nx: usize, ny: usize, nc: usize) -> Self {
        let px = random_distribution(rng, nx, 0.0);
        let channel = (0..nx).map(|_| random_distribution(rng, ny, 0.2)).collect();
        let pc = (0..nx).map(|_| (0..ny).map(|_| random_distribution(rng, nc, 0.2)).collect()).collect();
        JointDistribution { px, channel, pc }
    }

    /// Joint whose context depends on `y` only: `Pr(c|x,y) = pc_given_y[y][c]`.
    pub fn independent(px: Vec<f64>, channel: Vec<Vec<f64>>, pc_given_y: Vec<Vec<f64>>) -> Result<Self> {
        let pc = (0..px.len()).map(|_| pc_given_y.clone()).collect();
        Self::new(px, channel, pc)
    }

    /// Random joint in which `C` is independent of `X` given `Y`.
    pub fn random_independent<R: Rng + ?Sized>(rng: &mut R, nx: usize, ny: usize, nc: usize) -> Self {
        let base = Self::random(rng, nx, ny, nc);
        let by_y: Vec<Vec<f64>> = (0..ny).map(|_| random_distribution(rng, nc, 0.2)).collect();
        JointDistribution { pc: vec![by_y; nx], ..base }
    }

    pub fn nx(&self) -> usize {
        self.px.len()
    }

    pub fn ny(&self) -> usize {
        self.channel[0].len()
    }

    pub fn nc(&self) -> usize {
        self.pc[0][0].len()
    }

    /// `Pr(x, y, c)`.
    pub fn prob(&self, x: usize, y: usize, c: usize) -> f64 {
        self.px[x] * self.channel[x][y] * self.pc[x][y][c]
    }

    pub fn to_channel(&self) -> Result<Channel> {
        Channel::from_matrix(&self.channel, None)
    }

    /// The exact prior `Pr(X)`.
    pub fn prior(&self) -> Result<PriorModel> {
        PriorModel::from_distribution(self.px.clone())
    }

    pub fn input_names(&self) -> Vec<String> {
        (0..self.nx()).map(|i| format!("x{i}")).collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        (0..self.ny()).map(|i| format!("y{i}")).collect()
    }

    pub fn context_names(&self) -> Vec<String> {
        (0..self.nc()).map(|i| format!("c{i}")).collect()
    }

    pub fn input_vocab(&self) -> Vocabulary {
        Vocabulary::new(self.input_names()).expect("generated names are unique")
    }

    /// Scorer returning `Pr(c|x', y)` from the table.
    pub fn exact_scorer(&self) -> Result<ExactJointScorer> {
        let contexts = self.context_names().into_iter().map(|c| vec![c]).collect();
        ExactJointScorer::new(&self.input_names(), &self.output_names(), contexts, self.pc.clone())
    }

    /// The two-token sentence `[y, c]` attacked at position 0.
    pub fn window(&self, y: TokenId, c: usize) -> ContextWindow {
        ContextWindow::new(vec![format!("y{}", y.0), format!("c{c}")], 0).expect("position 0 of two tokens")
    }
}

/// `H(X|Y)` and `H(X|Y,C)` in nats, by direct summation.
pub fn conditional_entropies(joint: &JointDistribution) -> (f64, f64) {
    let (nx, ny, nc) = (joint.nx(), joint.ny(), joint.nc());
    let mut h_xy = 0.0;
    let mut h_xyc = 0.0;
    for y in 0..ny {
        let pxy: Vec<f64> = (0..nx).map(|x| joint.px[x] * joint.channel[x][y]).collect();
        let py: f64 = pxy.iter().sum();
        for &p in &pxy {
            if p > 0.0 {
                h_xy -= p * (p / py).ln();
            }
        }
        for c in 0..nc {
            let pxyc: Vec<f64> = (0..nx).map(|x| joint.prob(x, y, c)).collect();
            let pyc: f64 = pxyc.iter().sum();
            for &p in &pxyc {
                if p > 0.0 {
                    h_xyc -= p * (p / pyc).ln();
                }
            }
        }
    }
    (h_xy, h_xyc)
}
