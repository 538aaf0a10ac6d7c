use std::collections::BTreeMap;

use crate::assign::{BitWidthPlan, InstanceKey};
use crate::error::{Error, Result};

/// Receive buffer sizes one device allocates: bytes per bit-width (`[2, 4, 8]`)
/// for every `(exchange, source device)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReceiveBuffers {
    pub device: usize,
    pub sizes: BTreeMap<(InstanceKey, usize), [u64; 3]>,
    pub version: u64,
}

impl ReceiveBuffers {
    pub fn total(&self) -> u64 {
        self.sizes.values().flatten().sum()
    }
}

/// Each device announces the send sizes implied by its copy of the plan;
/// receivers check them against their own copy and size their buffers.
///
/// `plans[d]` is device `d`'s plan. Mismatched versions or sizes mean the
/// devices disagree about the plan and are reported as protocol errors.
pub fn negotiate_buffers(plans: &[BitWidthPlan]) -> Result<Vec<ReceiveBuffers>> {
    let Some(first) = plans.first() else {
        return Ok(Vec::new());
    };
    for (d, p) in plans.iter().enumerate() {
        if p.version != first.version {
            return Err(Error::protocol(format!(
                "device {d} holds plan version {}, device 0 holds {}",
                p.version, first.version
            )));
        }
    }
    let n = plans.len();
    // what each source announces
    let mut announced: BTreeMap<(InstanceKey, usize, usize), [u64; 3]> = BTreeMap::new();
    for (src, plan) in plans.iter().enumerate() {
        for inst in &plan.instances {
            for p in inst.pairs.iter().filter(|p| p.src == src) {
                if p.dst >= n {
                    return Err(Error::protocol(format!(
                        "plan addresses unknown device {}",
                        p.dst
                    )));
                }
                announced.insert((inst.key, p.src, p.dst), p.buffer_sizes());
            }
        }
    }
    let mut out: Vec<ReceiveBuffers> = (0..n)
        .map(|d| ReceiveBuffers {
            device: d,
            sizes: BTreeMap::new(),
            version: first.version,
        })
        .collect();
    let mut expected_count = 0;
    for (dst, plan) in plans.iter().enumerate() {
        for inst in &plan.instances {
            for p in inst.pairs.iter().filter(|p| p.dst == dst) {
                expected_count += 1;
                let mine = p.buffer_sizes();
                match announced.get(&(inst.key, p.src, dst)) {
                    Some(theirs) if *theirs == mine => {
                        out[dst].sizes.insert((inst.key, p.src), mine);
                    }
                    Some(theirs) => {
                        return Err(Error::protocol(format!(
                            "{} -> {dst} in {}: sender announces {theirs:?} bytes, receiver expects {mine:?}",
                            p.src, inst.key
                        )))
                    }
                    None => {
                        return Err(Error::protocol(format!(
                            "{} -> {dst} in {}: receiver expects data the sender does not plan",
                            p.src, inst.key
                        )))
                    }
                }
            }
        }
    }
    if expected_count != announced.len() {
        return Err(Error::protocol(
            "a sender plans data its receiver does not expect",
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::PlanLayout;
    use crate::quant::{BitWidth, HEADER_LEN};

    fn layout() -> PlanLayout {
        let mut l = PlanLayout::new();
        l.entry(InstanceKey::forward(0))
            .or_default()
            .insert((0, 1), vec![10]);
        l
    }

    #[test]
    fn both_ends_agree_on_single_message() {
        let plan = BitWidthPlan::uniform(&layout(), BitWidth::B8);
        let bufs = negotiate_buffers(&[plan.clone(), plan]).unwrap();
        assert_eq!(
            bufs[1].sizes[&(InstanceKey::forward(0), 0)],
            [0, 0, 10 + HEADER_LEN as u64]
        );
        assert!(bufs[0].sizes.is_empty());
    }

    #[test]
    fn version_skew_is_rejected() {
        let plan = BitWidthPlan::uniform(&layout(), BitWidth::B8);
        let mut newer = plan.clone();
        newer.version = 1;
        assert!(matches!(
            negotiate_buffers(&[plan, newer]),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn size_disagreement_is_rejected() {
        let a = BitWidthPlan::uniform(&layout(), BitWidth::B8);
        let b = BitWidthPlan::uniform(&layout(), BitWidth::B2);
        assert!(matches!(
            negotiate_buffers(&[a, b]),
            Err(Error::Protocol(_))
        ));
    }
}
