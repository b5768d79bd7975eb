//! Sequential composition of layers with saved-activation backprop.

use super::layers::{Conv1d, GroupNorm, Parameter, Silu, TransposedConv1d};
use super::tensor::Tensor;

/// One node in a sequential stack.
#[derive(Debug, Clone)]
pub enum Node {
    Conv(Conv1d),
    TConv(TransposedConv1d),
    Gn(GroupNorm),
    Silu,
    /// Pre-activation residual block: x + conv(silu(gn(x))). The conv is the
    /// final layer of a residual branch, so it starts zero-initialized.
    ResConv { gn: GroupNorm, conv: Conv1d },
    /// Range clamp with pass-through gradient inside the interval.
    Clamp { lo: f32, hi: f32 },
}

impl Node {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Node::Conv(l) => l.forward(x),
            Node::TConv(l) => l.forward(x),
            Node::Gn(l) => l.forward(x),
            Node::Silu => Silu.forward(x),
            Node::ResConv { gn, conv } => {
                let h = conv.forward(&Silu.forward(&gn.forward(x)));
                let mut y = x.clone();
                y.axpy(1.0, &h);
                y
            }
            Node::Clamp { lo, hi } => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.clamp(*lo, *hi));
                y
            }
        }
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        match self {
            Node::Conv(l) => l.backward(x, dy),
            Node::TConv(l) => l.backward(x, dy),
            Node::Gn(l) => l.backward(x, dy),
            Node::Silu => Silu.backward(x, dy),
            Node::ResConv { gn, conv } => {
                let gnx = gn.forward(x);
                let act = Silu.forward(&gnx);
                let dact = conv.backward(&act, dy);
                let dgnx = Silu.backward(&gnx, &dact);
                let mut dx = gn.backward(x, &dgnx);
                dx.axpy(1.0, dy);
                dx
            }
            Node::Clamp { lo, hi } => {
                let mut dx = dy.clone();
                for (g, &xv) in dx.data_mut().iter_mut().zip(x.data().iter()) {
                    if xv < *lo || xv > *hi {
                        *g = 0.0;
                    }
                }
                dx
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Node::Conv(l) => vec![&mut l.w, &mut l.b],
            Node::TConv(l) => vec![&mut l.w, &mut l.b],
            Node::Gn(l) => vec![&mut l.gamma, &mut l.beta],
            Node::Silu | Node::Clamp { .. } => vec![],
            Node::ResConv { gn, conv } => {
                vec![&mut gn.gamma, &mut gn.beta, &mut conv.w, &mut conv.b]
            }
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Node::Conv(l) => vec![&l.w, &l.b],
            Node::TConv(l) => vec![&l.w, &l.b],
            Node::Gn(l) => vec![&l.gamma, &l.beta],
            Node::Silu | Node::Clamp { .. } => vec![],
            Node::ResConv { gn, conv } => vec![&gn.gamma, &gn.beta, &conv.w, &conv.b],
        }
    }
}

/// A chain of nodes applied in order.
#[derive(Debug, Clone, Default)]
pub struct Stack {
    pub nodes: Vec<Node>,
}

impl Stack {
    pub fn new(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    /// Inference-only pass.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for node in &self.nodes {
            cur = node.forward(&cur);
        }
        cur
    }

    /// Training pass: returns the output plus every node's input, which
    /// `backward` consumes.
    pub fn forward_train(&self, x: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut saved = Vec::with_capacity(self.nodes.len());
        let mut cur = x.clone();
        for node in &self.nodes {
            let next = node.forward(&cur);
            saved.push(cur);
            cur = next;
        }
        (cur, saved)
    }

    pub fn backward(&mut self, saved: &[Tensor], dy: &Tensor) -> Tensor {
        assert_eq!(saved.len(), self.nodes.len(), "saved activation mismatch");
        let mut grad = dy.clone();
        for (node, x) in self.nodes.iter_mut().zip(saved.iter()).rev() {
            grad = node.backward(x, &grad);
        }
        grad
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.nodes.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.nodes.iter().flat_map(|n| n.params()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// End-to-end finite-difference check of a small stack, including a
    /// residual block, against a projected scalar loss.
    #[test]
    fn stack_backward_matches_finite_differences() {
        let mut rng = SeededRng::from_seed(42);
        let mut res_conv = Conv1d::new_zeroed("res.conv", 4, 4, 3, 1, 1);
        // Give the residual conv nonzero weights so its gradient path is live.
        res_conv.w.value = Tensor::randn_trunc(&[4, 4, 3], 0.3, &mut rng);
        let mut stack = Stack::new(vec![
            Node::Conv(Conv1d::new("c1", 2, 4, 4, 2, 1, 0.4, &mut rng)),
            Node::Gn(GroupNorm::new("g1", 4, 2)),
            Node::Silu,
            Node::ResConv {
                gn: GroupNorm::new("res.gn", 4, 2),
                conv: res_conv,
            },
            Node::TConv(TransposedConv1d::new("t1", 4, 2, 4, 2, 1, 0.4, &mut rng)),
        ]);

        let x = Tensor::randn(&[2, 2, 12], &mut rng);
        let (y, saved) = stack.forward_train(&x);
        let dir = Tensor::randn(y.shape(), &mut rng);
        let loss = |y: &Tensor| -> f64 {
            y.data()
                .iter()
                .zip(dir.data().iter())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        let dx = stack.backward(&saved, &dir);

        let mut xp = x.clone();
        let h = 1e-2f32;
        let mut max_err = 0.0f64;
        for ei in 0..x.numel() {
            let orig = xp.data()[ei];
            xp.data_mut()[ei] = orig + h;
            let lp = loss(&stack.forward(&xp));
            xp.data_mut()[ei] = orig - h;
            let lm = loss(&stack.forward(&xp));
            xp.data_mut()[ei] = orig;
            let fd = (lp - lm) / (2.0 * h as f64);
            let a = dx.data()[ei] as f64;
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            max_err = max_err.max(err);
        }
        assert!(max_err < 2e-2, "stack fd mismatch {max_err}");
    }

    #[test]
    fn clamp_masks_gradient_outside_range() {
        let mut node = Node::Clamp { lo: -1.0, hi: 1.0 };
        let x = Tensor::from_vec(&[1, 1, 4], vec![-2.0, 0.5, 0.9, 1.5]).unwrap();
        let y = node.forward(&x);
        assert_eq!(y.data(), &[-1.0, 0.5, 0.9, 1.0]);
        let dy = Tensor::full(&[1, 1, 4], 1.0);
        let dx = node.backward(&x, &dy);
        assert_eq!(dx.data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
