//! Dense linear algebra, the residual MLP encoder and its optimizer.

pub mod adam;
pub mod checkpoint;
pub mod encoder;
pub mod matrix;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
pub use encoder::{encode, encode_backward, encode_forward, init_params, EncoderArch, EncoderGrads, EncoderParams, ForwardCache};
pub use matrix::{gemm, matmul, Matrix, Op};

/// Sets flush-to-zero and denormals-are-zero for the calling thread.
///
/// Once a contrastive loss saturates, softmax tails, gradients and Adam's
/// second moments drift into the subnormal range, where x86 arithmetic is
/// dozens of times slower. No-op on other targets.
pub fn flush_subnormals() {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
    // SAFETY: only the FTZ (bit 15) and DAZ (bit 6) flags of this thread's
    // MXCSR change; rounding mode and exception masks are preserved.
    unsafe {
        let mut csr: u32 = 0;
        std::arch::asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack));
        csr |= 0x8040;
        std::arch::asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack, readonly));
    }
}

#[cfg(test)]
mod tests {
    #[test]
    #[cfg(target_arch = "x86_64")]
    fn subnormal_results_flush_to_zero() {
        let tiny = std::hint::black_box(f32::MIN_POSITIVE);
        // fresh thread so the flag does not leak into other tests
        let (before, after) = std::thread::spawn(move || {
            let before = std::hint::black_box(tiny / 4.0);
            super::flush_subnormals();
            (before, std::hint::black_box(tiny) / 4.0)
        })
        .join()
        .unwrap();
        assert!(before > 0.0);
        assert_eq!(after, 0.0);
    }
}
