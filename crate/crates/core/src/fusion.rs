//! Multi-annotator label fusion and inter-rater agreement.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, BinaryMask};
use crate::texture::list_png_ids;

/// Annotators' masks for one image. At least two annotators, all masks the same shape.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    annotator_ids: Vec<String>,
    masks: Vec<BinaryMask>,
}

impl AnnotationSet {
    pub fn new(annotator_ids: Vec<String>, masks: Vec<BinaryMask>) -> Result<Self> {
        if annotator_ids.len() != masks.len() {
            return Err(Error::InvalidAnnotationSet(format!(
                "{} ids for {} masks",
                annotator_ids.len(),
                masks.len()
            )));
        }
        if masks.len() < 2 {
            return Err(Error::InvalidAnnotationSet(format!(
                "need at least 2 annotators, got {}",
                masks.len()
            )));
        }
        for m in &masks[1..] {
            masks[0].ensure_same_shape(m)?;
        }
        Ok(Self {
            annotator_ids,
            masks,
        })
    }

    /// Convenience constructor naming annotators `a`, `b`, `c`, ...
    pub fn from_masks(masks: Vec<BinaryMask>) -> Result<Self> {
        let ids = (0..masks.len())
            .map(|i| ((b'a' + (i % 26) as u8) as char).to_string())
            .collect();
        Self::new(ids, masks)
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Keeps pixels marked by at least `threshold` annotators.
pub fn majority_vote(set: &AnnotationSet, threshold: usize) -> Result<BinaryMask> {
    if threshold == 0 || threshold > set.len() {
        return Err(Error::InvalidThreshold {
            threshold,
            annotators: set.len(),
        });
    }
    let first = &set.masks[0];
    let mut counts = vec![0usize; first.data().len()];
    for m in &set.masks {
        for (c, &v) in counts.iter_mut().zip(m.data()) {
            *c += v as usize;
        }
    }
    BinaryMask::new(
        first.height(),
        first.width(),
        counts.into_iter().map(|c| (c >= threshold) as u8).collect(),
    )
}

/// Intersection over union; two empty masks agree perfectly (1.0).
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Sample Pearson correlation of the flattened `{0, 1}` rasters.
pub fn pearson(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len() as f64;
    let (mut sa, mut sb, mut sab) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        sa += x as usize;
        sb += y as usize;
        sab += (x & y) as usize;
    }
    // For binary data sum(x^2) = sum(x), so the moments reduce to counts.
    let (sa, sb, sab) = (sa as f64, sb as f64, sab as f64);
    let cov = sab - sa * sb / n;
    let va = sa - sa * sa / n;
    let vb = sb - sb * sb / n;
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::DegenerateInput {
            reason: "constant mask has zero variance".into(),
            pair: None,
        });
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub a: String,
    pub b: String,
    pub jaccard: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementAverages {
    pub jaccard: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pairs: Vec<PairAgreement>,
    pub averages: AgreementAverages,
}

impl AgreementReport {
    fn from_pairs(mut pairs: Vec<PairAgreement>) -> Self {
        pairs.sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
        let n = pairs.len() as f64;
        let averages = AgreementAverages {
            jaccard: pairs.iter().map(|p| p.jaccard).sum::<f64>() / n,
            pearson: pairs.iter().map(|p| p.pearson).sum::<f64>() / n,
        };
        Self { pairs, averages }
    }
}

/// Jaccard and Pearson for every unordered annotator pair.
pub fn agreement(set: &AnnotationSet) -> Result<AgreementReport> {
    let mut pairs = Vec::new();
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            let (ia, ib) = ordered(&set.annotator_ids[i], &set.annotator_ids[j]);
            let (ma, mb) = (&set.masks[i], &set.masks[j]);
            let p = pearson(ma, mb).map_err(|e| tag_pair(e, ia, ib))?;
            pairs.push(PairAgreement {
                a: ia.to_string(),
                b: ib.to_string(),
                jaccard: jaccard(ma, mb)?,
                pearson: p,
            });
        }
    }
    Ok(AgreementReport::from_pairs(pairs))
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn tag_pair(e: Error, a: &str, b: &str) -> Error {
    match e {
        Error::DegenerateInput { reason, .. } => Error::DegenerateInput {
            reason,
            pair: Some((a.to_string(), b.to_string())),
        },
        other => other,
    }
}

/// Annotator subdirectory names under `root`, sorted.
pub fn list_annotators(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads `root/<annotator>/<image_id>.png` for every annotator.
pub fn load_annotation_set(root: &Path, image_id: &str) -> Result<AnnotationSet> {
    let annotators = list_annotators(root)?;
    let masks = annotators
        .iter()
        .map(|a| image::load_mask(root.join(a).join(format!("{image_id}.png"))))
        .collect::<Result<Vec<_>>>()?;
    AnnotationSet::new(annotators, masks)
}

/// Image ids present for every annotator.
pub fn annotated_ids(root: &Path) -> Result<Vec<String>> {
    let annotators = list_annotators(root)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in &annotators {
        for id in list_png_ids(&root.join(a))? {
            *counts.entry(id).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .filter(|(_, c)| *c == annotators.len())
        .map(|(id, _)| id)
        .collect())
}

/// Fuses every image under an `annotations/<annotator>/<id>.png` tree into `out_dir/<id>.png`.
pub fn fuse_directory(root: &Path, out_dir: &Path, threshold: usize) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids = annotated_ids(root)?;
    for id in &ids {
        let set = load_annotation_set(root, id)?;
        image::save_mask(
            &majority_vote(&set, threshold)?,
            out_dir.join(format!("{id}.png")),
        )?;
    }
    Ok(ids.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAgreement {
    pub id: String,
    #[serde(flatten)]
    pub report: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryAgreement {
    /// Agreement over all images concatenated into one pixel vector per annotator.
    pub pooled: AgreementReport,
    pub per_image: Vec<ImageAgreement>,
    /// Images skipped because some annotator's mask was constant.
    pub skipped: Vec<String>,
}

/// Agreement for an annotation tree, pooled over images and per image.
pub fn agreement_directory(root: &Path) -> Result<DirectoryAgreement> {
    let ids = annotated_ids(root)?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let annotators = list_annotators(root)?;
    let mut pooled: Vec<Vec<u8>> = vec![Vec::new(); annotators.len()];
    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    for id in &ids {
        let set = load_annotation_set(root, id)?;
        for (buf, m) in pooled.iter_mut().zip(set.masks()) {
            buf.extend_from_slice(m.data());
        }
        match agreement(&set) {
            Ok(report) => per_image.push(ImageAgreement {
                id: id.clone(),
                report,
            }),
            Err(Error::DegenerateInput { .. }) => skipped.push(id.clone()),
            Err(e) => return Err(e),
        }
    }
    let masks = pooled
        .into_iter()
        .map(|d| {
            let n = d.len();
            BinaryMask::new(1, n, d)
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = agreement(&AnnotationSet::new(annotators, masks)?)?;
    Ok(DirectoryAgreement {
        pooled,
        per_image,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn vote_counts() {
        let set =
            AnnotationSet::from_masks(vec![m(&[1, 1, 0]), m(&[0, 1, 1]), m(&[0, 1, 0])]).unwrap();
        assert_eq!(majority_vote(&set, 2).unwrap(), m(&[0, 1, 0]));
        assert_eq!(majority_vote(&set, 1).unwrap(), m(&[1, 1, 1]));
        assert_eq!(majority_vote(&set, 3).unwrap(), m(&[0, 1, 0]));
        assert!(matches!(
            majority_vote(&set, 0),
            Err(Error::InvalidThreshold { .. })
        ));
        assert!(matches!(
            majority_vote(&set, 4),
            Err(Error::InvalidThreshold { .. })
        ));
    }

    #[test]
    fn annotation_set_validation() {
        assert!(AnnotationSet::from_masks(vec![m(&[1])]).is_err());
        assert!(matches!(
            AnnotationSet::from_masks(vec![m(&[1]), m(&[1, 0])]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&m(&[1, 0, 1]), &m(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(jaccard(&m(&[1, 0, 0]), &m(&[0, 0, 1])).unwrap(), 0.0);
        assert_eq!(
            jaccard(&m(&[1, 1, 0, 0]), &m(&[0, 1, 1, 0])).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(jaccard(&m(&[0, 0]), &m(&[0, 0])).unwrap(), 1.0);
        assert!(jaccard(&m(&[0]), &m(&[0, 0])).is_err());
    }

    #[test]
    fn pearson_cases() {
        let a = m(&[1, 0, 1, 1, 0]);
        let inv = m(&[0, 1, 0, 0, 1]);
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &inv).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&m(&[0, 0, 0]), &m(&[1, 0, 1])),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn agreement_identical_and_pair_count() {
        let x = m(&[1, 0, 0, 1]);
        let r =
            agreement(&AnnotationSet::from_masks(vec![x.clone(), x.clone(), x.clone()]).unwrap())
                .unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert!(r
            .pairs
            .iter()
            .all(|p| p.jaccard == 1.0 && (p.pearson - 1.0).abs() < 1e-12));
        assert_eq!(r.averages.jaccard, 1.0);
        let r2 = agreement(&AnnotationSet::from_masks(vec![x.clone(), m(&[0, 1, 1, 0])]).unwrap())
            .unwrap();
        assert_eq!(r2.pairs.len(), 1);
    }

    #[test]
    fn agreement_degenerate_is_tagged() {
        let set =
            AnnotationSet::new(vec!["x".into(), "y".into()], vec![m(&[0, 0]), m(&[1, 0])]).unwrap();
        match agreement(&set) {
            Err(Error::DegenerateInput {
                pair: Some((a, b)), ..
            }) => assert_eq!((a.as_str(), b.as_str()), ("x", "y")),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Hand-enumerated 2x2 case: A = {1,1,0,0}, B = {1,0,1,0}, C = {1,1,1,0}.
    #[test]
    fn agreement_matches_enumeration() {
        let a = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let b = BinaryMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let c = BinaryMask::new(2, 2, vec![1, 1, 1, 0]).unwrap();
        let r = agreement(&AnnotationSet::from_masks(vec![a, b, c]).unwrap()).unwrap();
        // A,B: inter 1, union 3; r = (1 - 2*2/4) / sqrt(1 * 1) = 0.
        // A,C: inter 2, union 3; r = (2 - 2*3/4) / sqrt(1 * 0.75) = 0.5 / sqrt(0.75).
        // B,C: same as A,C by symmetry.
        let ac = 0.5 / 0.75f64.sqrt();
        let expect = [
            ("a", "b", 1.0 / 3.0, 0.0),
            ("a", "c", 2.0 / 3.0, ac),
            ("b", "c", 2.0 / 3.0, ac),
        ];
        for (p, (ea, eb, j, pr)) in r.pairs.iter().zip(expect) {
            assert_eq!((p.a.as_str(), p.b.as_str()), (ea, eb));
            assert!((p.jaccard - j).abs() < 1e-12);
            assert!((p.pearson - pr).abs() < 1e-12);
        }
        assert!((r.averages.jaccard - 5.0 / 9.0).abs() < 1e-12);
        assert!((r.averages.pearson - 2.0 * ac / 3.0).abs() < 1e-12);
    }

    fn mask_strategy(n: usize) -> impl Strategy<Value = BinaryMask> {
        prop::collection::vec(0u8..=1, n).prop_map(move |d| BinaryMask::new(1, n, d).unwrap())
    }

    proptest! {
        #[test]
        fn vote_is_monotone(a in mask_strategy(16), b in mask_strategy(16), c in mask_strategy(16), extra in mask_strategy(16), t in 1usize..=3) {
            let before = majority_vote(&AnnotationSet::from_masks(vec![a.clone(), b.clone(), c.clone()]).unwrap(), t).unwrap();
            let grown = BinaryMask::new(1, 16, a.data().iter().zip(extra.data()).map(|(x, y)| x | y).collect()).unwrap();
            let after = majority_vote(&AnnotationSet::from_masks(vec![grown, b, c]).unwrap(), t).unwrap();
            prop_assert!(before.is_subset_of(&after));
        }

        #[test]
        fn vote_is_permutation_invariant(a in mask_strategy(16), b in mask_strategy(16), c in mask_strategy(16), t in 1usize..=3) {
            let x = majority_vote(&AnnotationSet::from_masks(vec![a.clone(), b.clone(), c.clone()]).unwrap(), t).unwrap();
            let y = majority_vote(&AnnotationSet::from_masks(vec![c, a, b]).unwrap(), t).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn jaccard_symmetric_and_identity(a in mask_strategy(12), b in mask_strategy(12)) {
            prop_assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
            if a.count_ones() > 0 || b.count_ones() > 0 {
                prop_assert_eq!(jaccard(&a, &b).unwrap() == 1.0, a == b);
            }
        }

        #[test]
        fn pearson_symmetric(a in mask_strategy(12), b in mask_strategy(12)) {
            match (pearson(&a, &b), pearson(&b, &a)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
