//! Per-anchor partner enumeration for the three contrastive regimes.
//!
//! - semi-contrastive: the anchor's own sample in the two other modalities,
//!   all positive.
//! - intra-modal: every other sample in the anchor's modality, positive when
//!   the binary classes agree.
//! - inter-modal: every other sample in each of the two other modalities,
//!   positive when the binary classes agree.

use crate::model::{BinaryClass, Modality};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnchorRef {
    pub sample: usize,
    pub modality: Modality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Partner {
    pub sample: usize,
    pub modality: Modality,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub anchor: AnchorRef,
    pub partners: Vec<Partner>,
}

impl PairIndex {
    pub fn positives(&self) -> impl Iterator<Item = &Partner> {
        self.partners
            .iter()
            .filter(|p| p.polarity == Polarity::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Partner> {
        self.partners
            .iter()
            .filter(|p| p.polarity == Polarity::Negative)
    }

    pub fn num_positives(&self) -> usize {
        self.positives().count()
    }

    pub fn num_negatives(&self) -> usize {
        self.negatives().count()
    }
}

fn polarity(classes: &[BinaryClass], a: usize, b: usize) -> Polarity {
    if classes[a] == classes[b] {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

pub fn pairs_scl(anchor: AnchorRef) -> PairIndex {
    let partners = anchor
        .modality
        .others()
        .into_iter()
        .map(|modality| Partner {
            sample: anchor.sample,
            modality,
            polarity: Polarity::Positive,
        })
        .collect();
    PairIndex { anchor, partners }
}

pub fn pairs_iamcl(anchor: AnchorRef, classes: &[BinaryClass]) -> PairIndex {
    debug_assert!(anchor.sample < classes.len());
    let partners = (0..classes.len())
        .filter(|&j| j != anchor.sample)
        .map(|j| Partner {
            sample: j,
            modality: anchor.modality,
            polarity: polarity(classes, anchor.sample, j),
        })
        .collect();
    PairIndex { anchor, partners }
}

/// Partners are ordered by sample, then by modality.
pub fn pairs_iemcl(anchor: AnchorRef, classes: &[BinaryClass]) -> PairIndex {
    debug_assert!(anchor.sample < classes.len());
    let others = anchor.modality.others();
    let partners = (0..classes.len())
        .filter(|&j| j != anchor.sample)
        .flat_map(|j| {
            let pol = polarity(classes, anchor.sample, j);
            others.into_iter().map(move |modality| Partner {
                sample: j,
                modality,
                polarity: pol,
            })
        })
        .collect();
    PairIndex { anchor, partners }
}

/// All 3K anchors in (sample, modality) order.
pub fn all_anchors(k: usize) -> Vec<AnchorRef> {
    (0..k)
        .flat_map(|sample| {
            Modality::ALL
                .into_iter()
                .map(move |modality| AnchorRef { sample, modality })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryClass::{Negative as N, Positive as P};

    fn a(sample: usize, modality: Modality) -> AnchorRef {
        AnchorRef { sample, modality }
    }

    #[test]
    fn scl_partners() {
        let p = pairs_scl(a(0, Modality::Language));
        assert_eq!(
            p.partners,
            vec![
                Partner {
                    sample: 0,
                    modality: Modality::Audio,
                    polarity: Polarity::Positive
                },
                Partner {
                    sample: 0,
                    modality: Modality::Visual,
                    polarity: Polarity::Positive
                },
            ]
        );
        let p = pairs_scl(a(3, Modality::Visual));
        let ms: Vec<_> = p.partners.iter().map(|q| (q.sample, q.modality)).collect();
        assert_eq!(ms, vec![(3, Modality::Language), (3, Modality::Audio)]);
        assert_eq!(p.num_negatives(), 0);
    }

    #[test]
    fn iamcl_counts() {
        let classes = [P, P, N, N];
        let p = pairs_iamcl(a(0, Modality::Language), &classes);
        let pos: Vec<_> = p.positives().map(|q| q.sample).collect();
        let neg: Vec<_> = p.negatives().map(|q| q.sample).collect();
        assert_eq!(pos, vec![1]);
        assert_eq!(neg, vec![2, 3]);
        assert!(p.partners.iter().all(|q| q.modality == Modality::Language));
    }

    #[test]
    fn iamcl_single_class() {
        let classes = [N; 5];
        let p = pairs_iamcl(a(2, Modality::Audio), &classes);
        assert_eq!((p.num_positives(), p.num_negatives()), (4, 0));
    }

    #[test]
    fn iemcl_counts() {
        let classes = [P, P, N, N];
        let p = pairs_iemcl(a(0, Modality::Language), &classes);
        let pos: Vec<_> = p.positives().map(|q| (q.sample, q.modality)).collect();
        assert_eq!(pos, vec![(1, Modality::Audio), (1, Modality::Visual)]);
        assert_eq!(p.num_negatives(), 4);
    }

    #[test]
    fn anchors() {
        assert_eq!(all_anchors(2).len(), 6);
        assert_eq!(all_anchors(32).len(), 96);
        assert_eq!(all_anchors(5), all_anchors(5));
        assert_eq!(all_anchors(2)[1], a(0, Modality::Audio));
        assert_eq!(all_anchors(2)[3], a(1, Modality::Language));
    }
}
