//! Noise-cancellation lanes: sample `y ∼ N(μ, σ²)` per element and
//! subtract it from the activation.

use crate::cycles::cancel_cycles;
use crate::error::{HwError, Result};
use crate::fixed::{saturate, FxTensor};
use crate::lfsr::LfsrBank;
use crate::unc::{gauss_gen, Unc};

/// Element `e` goes to lane `e % lanes`; each lane draws one word from
/// each of its two LFSRs per element, in element order.
///
/// Returns the cancelled tensor and the cycle count
/// `⌈E/lanes⌉ + pipeline_depth`.
pub fn noise_cancel(
    x: &FxTensor,
    mu: &FxTensor,
    sigma: &FxTensor,
    unc: &Unc,
    bank: &mut LfsrBank,
    pipeline_depth: u64,
) -> Result<(FxTensor, u64)> {
    mu.expect_shape(x.shape(), "noise cancel mean")?;
    sigma.expect_shape(x.shape(), "noise cancel scale")?;
    let q = x.qformat();
    if mu.qformat() != q || sigma.qformat() != q || unc.qformat() != q {
        return Err(HwError::Config("noise cancel operands use different Q formats".into()));
    }
    let lanes = bank.lanes();
    let mut out = x.clone();
    let (xr, mr, sr) = (x.raw(), mu.raw(), sigma.raw());
    let or = out.raw_mut();
    for lane in 0..lanes {
        let (u1, u2) = bank.lane_mut(lane);
        for e in (lane..xr.len()).step_by(lanes) {
            let z1 = unc.z1_words(u1.next_word(), u2.next_word());
            let y = gauss_gen(z1, mr[e], sr[e], q);
            or[e] = saturate(xr[e] as i64 - y as i64);
        }
    }
    Ok((out, cancel_cycles(xr.len(), lanes, pipeline_depth)))
}
