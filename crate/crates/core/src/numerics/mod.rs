//! Dense-tensor core: matrix products, row kernels, grouped-query attention
//! and the finite-difference oracle used to check every backward pass.

pub mod attention;
pub mod gradcheck;
pub mod ops;
pub mod rope;
pub mod tensor;

pub use attention::{attend, attend_backward, mha_backward, mha_forward, AttentionParams, HeadLayout, MhaCache, MhaGrads, MhaOutput};
pub use gradcheck::{finite_diff_at, finite_diff_grad, relative_error};
pub use ops::{rms_norm, rms_norm_backward, softmax_rows, FfnCache, FfnGrads, FfnParams};
pub use rope::Rope;
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
