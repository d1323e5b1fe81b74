//! Central finite differences against the tape on random small networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varbench_core::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
enum Head {
    CrossEntropy,
    SigmoidMse,
    SquaredNorm,
}

/// conv -> relu -> pool -> dense -> one of three losses, with every leaf
/// differentiable.
pub struct RandomNet {
    leaves: Vec<Tensor<f64>>,
    stride: usize,
    padding: usize,
    labels: Vec<usize>,
    target: Tensor<f64>,
    head: Head,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

impl RandomNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = rng.random_range(1..=3);
        let channels = rng.random_range(1..=3);
        let size = rng.random_range(4..=6);
        let hidden = rng.random_range(2..=4);
        let classes = rng.random_range(2..=4);
        let leaves = vec![
            uniform(&mut rng, &[batch, channels, size, size], 1.0),
            uniform(&mut rng, &[hidden, channels, 3, 3], 0.8),
            uniform(&mut rng, &[hidden], 0.3),
            uniform(&mut rng, &[hidden, classes], 1.0),
            uniform(&mut rng, &[classes], 0.3),
        ];
        let head = match seed % 3 {
            0 => Head::CrossEntropy,
            1 => Head::SigmoidMse,
            _ => Head::SquaredNorm,
        };
        RandomNet {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
            labels: (0..batch).map(|_| rng.random_range(0..classes)).collect(),
            target: uniform(&mut rng, &[batch, classes], 1.0),
            leaves,
            head,
        }
    }

    fn build(&self, leaves: &[Tensor<f64>]) -> (Graph<f64>, Vec<Var>, Var) {
        let mut g = Graph::new();
        let x = g.input(leaves[0].clone());
        let vars: Vec<Var> = std::iter::once(x)
            .chain(leaves[1..].iter().map(|t| g.param(t.clone())))
            .collect();
        let h = g.conv2d(x, vars[1], Some(vars[2]), self.stride, self.padding).unwrap();
        let h = g.relu(h).unwrap();
        let h = g.global_avg_pool(h).unwrap();
        let z = g.matmul(h, vars[3]).unwrap();
        let z = g.add(z, vars[4]).unwrap();
        let loss = match self.head {
            Head::CrossEntropy => g.softmax_cross_entropy(z, &self.labels).unwrap(),
            Head::SigmoidMse => {
                let s = g.sigmoid(z).unwrap();
                let t = g.constant(self.target.clone());
                g.mse(s, t).unwrap()
            }
            Head::SquaredNorm => {
                let t = g.constant(self.target.clone());
                let p = g.mul(z, t).unwrap();
                let p = g.scale(p, 0.7).unwrap();
                let n = g.l2_norm(p).unwrap();
                let s = g.sum(z).unwrap();
                let s = g.scale(s, 0.1).unwrap();
                g.add(n, s).unwrap()
            }
        };
        (g, vars, loss)
    }

    fn loss_at(&self, leaves: &[Tensor<f64>]) -> f64 {
        let (g, _, loss) = self.build(leaves);
        g.value(loss).item()
    }

    /// `(analytic, numeric)` for every coordinate of every leaf.
    pub fn gradient_pairs(&self, step: f64) -> Vec<(f64, f64)> {
        let (mut g, vars, loss) = self.build(&self.leaves);
        g.backward(loss).unwrap();
        let mut out = Vec::new();
        for (l, &v) in vars.iter().enumerate() {
            let analytic = g.grad(v).expect("leaf gradient").to_vec();
            for (c, a) in analytic.into_iter().enumerate() {
                let mut plus = self.leaves.clone();
                plus[l].data_mut()[c] += step;
                let mut minus = self.leaves.clone();
                minus[l].data_mut()[c] -= step;
                let numeric = (self.loss_at(&plus) - self.loss_at(&minus)) / (2.0 * step);
                out.push((a, numeric));
            }
        }
        out
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros comparable.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Fraction of coordinates with relative error below `tol` over `nets`
/// random networks, and the number of coordinates checked.
pub fn gradient_agreement(nets: u64, step: f64, tol: f64) -> (f64, usize) {
    let mut good = 0usize;
    let mut total = 0usize;
    for seed in 0..nets {
        for (a, n) in RandomNet::new(seed).gradient_pairs(step) {
            total += 1;
            if relative_error(a, n) < tol {
                good += 1;
            }
        }
    }
    (good as f64 / total as f64, total)
}
