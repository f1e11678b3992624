use rand::seq::SliceRandom;

use crate::data::{DomainTask, RumorExample};
use crate::error::{Error, Result};
use crate::model::Label;
use crate::seed;

/// Minimum domain size accepted by [`split`].
pub const MIN_DOMAIN_SIZE: usize = 10;

/// Seeded shuffle, then cut at 30% and 65% into train, validation and test.
pub fn split(name: &str, examples: &[RumorExample], seed: u64) -> Result<DomainTask> {
    let n = examples.len();
    if n < MIN_DOMAIN_SIZE {
        return Err(Error::Data(format!(
            "domain {name} has {n} examples, need at least {MIN_DOMAIN_SIZE}"
        )));
    }
    let mut xs = examples.to_vec();
    xs.shuffle(&mut seed::rng(seed, "split", 0));
    let a = n * 30 / 100;
    let b = n * 65 / 100;
    let test = xs.split_off(b);
    let validation = xs.split_off(a);
    let task = DomainTask {
        name: name.to_string(),
        train: xs,
        validation,
        test,
    };
    for (part, set) in [
        ("train", &task.train),
        ("validation", &task.validation),
        ("test", &task.test),
    ] {
        for label in Label::ALL {
            if !set.iter().any(|x| x.label == label) {
                return Err(Error::Data(format!(
                    "domain {name}: {part} split has no {} example",
                    label.as_str()
                )));
            }
        }
    }
    Ok(task)
}

/// `k` training examples per class, seeded, in train order.
pub fn few_shot<T: Clone>(
    train: &[T],
    label_of: impl Fn(&T) -> Label,
    k: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let mut rng = seed::rng(seed, "few-shot", k as u64);
    let mut chosen = Vec::with_capacity(2 * k);
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..train.len())
            .filter(|&i| label_of(&train[i]) == label)
            .collect();
        if idx.len() < k {
            return Err(Error::Data(format!(
                "{k}-shot sampling needs {k} {} examples, train has {}",
                label.as_str(),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..k]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| train[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn domain(n: usize) -> Vec<RumorExample> {
        (0..n)
            .map(|i| RumorExample {
                claim: format!("c{i}"),
                comments: vec![],
                label: Label::from_index(i % 2),
                domain: "d".into(),
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let t = split("d", &domain(20), 1).unwrap();
        assert_eq!((t.train.len(), t.validation.len(), t.test.len()), (6, 7, 7));
        let t = split("d", &domain(100), 1).unwrap();
        assert_eq!((t.train.len(), t.validation.len(), t.test.len()), (30, 35, 35));
        assert_eq!(split("d", &domain(20), 1).unwrap(), split("d", &domain(20), 1).unwrap());
        assert!(split("d", &domain(9), 1).is_err());
    }

    #[test]
    fn missing_class_is_rejected() {
        let mut xs = domain(20);
        for x in &mut xs {
            x.label = Label::Rumor;
        }
        assert!(matches!(split("d", &xs, 0), Err(Error::Data(_))));
    }

    #[test]
    fn few_shot_is_balanced_and_seeded() {
        let t = split("d", &domain(100), 3).unwrap();
        let fs = few_shot(&t.train, |x| x.label, 4, 9).unwrap();
        assert_eq!(fs.len(), 8);
        assert_eq!(fs.iter().filter(|x| x.label == Label::Rumor).count(), 4);
        assert!(fs.iter().all(|x| t.train.contains(x)));
        assert_eq!(fs, few_shot(&t.train, |x| x.label, 4, 9).unwrap());
        assert!(few_shot(&t.train, |x| x.label, 16, 9).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_the_domain(n in 10usize..200, seed in any::<u64>()) {
            if let Ok(t) = split("d", &domain(n), seed) {
                let mut all: Vec<_> = t.train.iter().chain(&t.validation).chain(&t.test)
                    .map(|x| x.claim.clone()).collect();
                all.sort();
                let mut want: Vec<_> = domain(n).into_iter().map(|x| x.claim).collect();
                want.sort();
                prop_assert_eq!(all, want);
                prop_assert_eq!(t.train.len(), n * 3 / 10);
            }
        }
    }
}
