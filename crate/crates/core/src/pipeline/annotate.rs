use std::collections::{HashMap, HashSet};

use super::bundle::ModelBundle;
use crate::data::{LabelSource, Labels, SequenceRecord};
use crate::error::{Error, Result};

/// Teacher predictions as synthetic labels; any existing labels are replaced.
pub fn annotate(teacher: &ModelBundle, records: &[&SequenceRecord]) -> Result<Vec<SequenceRecord>> {
    records
        .iter()
        .map(|r| {
            if r.feature_dim() != teacher.feature_dim() {
                return Err(Error::invalid(format!(
                    "record {} has feature dimension {}, teacher expects {}",
                    r.id,
                    r.feature_dim(),
                    teacher.feature_dim()
                )));
            }
            let tags = teacher.predict(&r.features)?;
            SequenceRecord::new(
                r.id.clone(),
                r.features.clone(),
                Some(Labels {
                    tags,
                    source: LabelSource::Synthetic,
                }),
            )
        })
        .collect()
}

/// `G = E u F` in `pool` order, keeping each record's label provenance.
pub fn assemble_training_union(
    annotated: &[&SequenceRecord],
    synthetic: &[&SequenceRecord],
    pool: &[String],
) -> Result<Vec<SequenceRecord>> {
    let mut by_id: HashMap<&str, &SequenceRecord> = HashMap::new();
    for r in annotated {
        if r.label_source() != Some(LabelSource::GroundTruth) {
            return Err(Error::InvalidState(format!("record {} in E is not ground-truth labeled", r.id)));
        }
        by_id.insert(&r.id, r);
    }
    for r in synthetic {
        if r.label_source() != Some(LabelSource::Synthetic) {
            return Err(Error::InvalidState(format!("record {} in F is not synthetically labeled", r.id)));
        }
        if by_id.insert(&r.id, r).is_some() {
            return Err(Error::InvalidState(format!("record {} is in both E and F", r.id)));
        }
    }
    let pool_set: HashSet<&str> = pool.iter().map(String::as_str).collect();
    if let Some(extra) = by_id.keys().find(|id| !pool_set.contains(*id)) {
        return Err(Error::InvalidState(format!("record {extra} is not in the training pool")));
    }
    pool.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| Error::InvalidState(format!("pool record {id} is in neither E nor F")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{argmax, Matrix, RngStream};
    use crate::pipeline::Variant;

    fn rec(id: &str, source: Option<LabelSource>, rng: &mut RngStream) -> SequenceRecord {
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let labels = source.map(|source| Labels { tags: vec![0, 1, 1, 2, 0], source });
        SequenceRecord::new(id, x, labels).unwrap()
    }

    #[test]
    fn zero_theta_teacher_labels_are_argmax() {
        let mut rng = RngStream::new(4);
        let teacher = ModelBundle::init(Variant::M5, 3, 3, 4, 9).unwrap();
        let records: Vec<SequenceRecord> = (0..3).map(|k| rec(&format!("r{k}"), Some(LabelSource::GroundTruth), &mut rng)).collect();
        let refs: Vec<&SequenceRecord> = records.iter().collect();
        let out = annotate(&teacher, &refs).unwrap();
        for (a, r) in out.iter().zip(&records) {
            assert_eq!(a.label_source(), Some(LabelSource::Synthetic));
            assert_eq!(a.len(), r.len());
            let expect: Vec<usize> = teacher.logits(&r.features).unwrap().iter_rows().map(argmax).collect();
            assert_eq!(a.tags().unwrap(), &expect[..]);
        }
        let wrong = SequenceRecord::new("w", Matrix::zeros(2, 4), None).unwrap();
        assert!(annotate(&teacher, &[&wrong]).is_err());
    }

    #[test]
    fn union_checks_partition() {
        let mut rng = RngStream::new(5);
        let e = [rec("a", Some(LabelSource::GroundTruth), &mut rng)];
        let f = [rec("b", Some(LabelSource::Synthetic), &mut rng), rec("c", Some(LabelSource::Synthetic), &mut rng)];
        let pool: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let g = assemble_training_union(&[&e[0]], &[&f[0], &f[1]], &pool).unwrap();
        let ids: Vec<&str> = g.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(g[1].label_source(), Some(LabelSource::GroundTruth));

        assert!(assemble_training_union(&[&e[0]], &[&f[0]], &pool).is_err());
        let dup = rec("a", Some(LabelSource::Synthetic), &mut rng);
        assert!(assemble_training_union(&[&e[0]], &[&f[0], &f[1], &dup], &pool).is_err());
        assert!(assemble_training_union(&[&f[0]], &[&f[1]], &pool).is_err());
    }
}
