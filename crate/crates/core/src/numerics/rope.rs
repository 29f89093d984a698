use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Rotary position transform in the rotate-half layout: within each head,
/// element `j` is paired with element `j + head_dim/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rope {
    pub head_dim: usize,
    pub theta: f64,
}

impl Rope {
    pub fn new(head_dim: usize, theta: f64) -> Result<Self> {
        if !head_dim.is_multiple_of(2) || head_dim == 0 {
            return Err(Error::Config(format!(
                "rotary transform needs an even head_dim, got {head_dim}"
            )));
        }
        Ok(Self { head_dim, theta })
    }

    fn angle(&self, pos: usize, j: usize) -> f64 {
        let inv_freq = self.theta.powf(-2.0 * j as f64 / self.head_dim as f64);
        pos as f64 * inv_freq
    }

    /// Rotate every head of every row; row `r` sits at `positions[r]`.
    pub fn apply(&self, x: &Tensor, positions: &[usize]) -> Result<Tensor> {
        self.rotate(x, positions, 1.0)
    }

    /// Transpose of [`Rope::apply`], used to pull gradients back through it.
    pub fn apply_inverse(&self, x: &Tensor, positions: &[usize]) -> Result<Tensor> {
        self.rotate(x, positions, -1.0)
    }

    fn rotate(&self, x: &Tensor, positions: &[usize], sign: f64) -> Result<Tensor> {
        let (rows, width) = x.expect_rank2("rope")?;
        if rows != positions.len() || width % self.head_dim != 0 {
            return Err(Error::shape("rope", x.shape(), &[positions.len(), self.head_dim]));
        }
        let half = self.head_dim / 2;
        let mut out = x.clone();
        for (r, &pos) in positions.iter().enumerate() {
            let row = out.row_mut(r);
            for head in row.chunks_mut(self.head_dim) {
                for j in 0..half {
                    let (s, c) = (sign * self.angle(pos, j)).sin_cos();
                    let a = head[j];
                    let b = head[j + half];
                    head[j] = a * c - b * s;
                    head[j + half] = b * c + a * s;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn position_zero_is_identity() {
        let rope = Rope::new(4, 10_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(&[1, 8], 1.0, &mut rng);
        assert_eq!(rope.apply(&x, &[0]).unwrap(), x);
    }

    #[test]
    fn inverse_undoes_rotation_and_preserves_norm() {
        let rope = Rope::new(8, 10_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[3, 16], 1.0, &mut rng);
        let pos = [0, 5, 17];
        let y = rope.apply(&x, &pos).unwrap();
        for r in 0..3 {
            let a: f64 = x.row(r).iter().map(|v| v * v).sum();
            let b: f64 = y.row(r).iter().map(|v| v * v).sum();
            assert!((a - b).abs() < 1e-12);
        }
        let back = rope.apply_inverse(&y, &pos).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn odd_head_dim_rejected() {
        assert!(Rope::new(3, 10_000.0).is_err());
    }
}
