use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Example};

/// Test set = every example of `held_out`; train = everything else.
pub fn split_leave_one_out(dataset: &Dataset, held_out: &str) -> Result<(Dataset, Dataset), DataError> {
    let events = dataset.events();
    if !events.iter().any(|e| e == held_out) {
        return Err(DataError::UnknownEvent {
            event: held_out.to_string(),
            available: events,
        });
    }
    let train = dataset.filter(|e| e.event != held_out);
    if train.is_empty() {
        return Err(DataError::EmptySplit(format!(
            "holding out {held_out:?} leaves no training examples"
        )));
    }
    let test = dataset.filter(|e| e.event == held_out);
    Ok((train, test))
}

/// Stratified random holdout.
///
/// Examples are grouped by `stratum` (unlabelled examples form their own
/// group). The test size `round(n·fraction)` over all groups with at least two
/// members is apportioned by largest remainder, so every group is within one
/// example of its exact share. Groups with fewer than two members stay in
/// train. Both outputs keep the input order.
pub fn split_holdout(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    stratum: impl Fn(&Example) -> Option<usize>,
) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut groups: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (i, ex) in dataset.examples().iter().enumerate() {
        let key = stratum(ex);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    groups.sort_by_key(|(k, _)| k.map_or(usize::MAX, |k| k));

    let eligible: Vec<usize> = groups
        .iter()
        .enumerate()
        .filter_map(|(gi, (key, members))| {
            if members.len() >= 2 {
                Some(gi)
            } else {
                log::warn!("holdout: class {key:?} has {} member(s); kept in train", members.len());
                None
            }
        })
        .collect();
    let pool: usize = eligible.iter().map(|&g| groups[g].1.len()).sum();
    let target = (pool as f64 * fraction).round() as usize;

    let mut quota = vec![0usize; groups.len()];
    let mut remainders = Vec::new();
    for &g in &eligible {
        let exact = groups[g].1.len() as f64 * fraction;
        quota[g] = exact.floor() as usize;
        remainders.push((exact - exact.floor(), g));
    }
    let mut assigned: usize = quota.iter().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, g) in remainders.iter().cycle().take(remainders.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[g] + 1 < groups[g].1.len() {
            quota[g] += 1;
            assigned += 1;
        }
    }
    for &g in &eligible {
        quota[g] = quota[g].min(groups[g].1.len() - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; dataset.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..quota[g]] {
            in_test[i] = true;
        }
    }
    let pick = |want: bool| {
        Dataset::new(
            dataset
                .examples()
                .iter()
                .zip(&in_test)
                .filter(|(_, &t)| t == want)
                .map(|(e, _)| e.clone())
                .collect(),
        )
    };
    Ok((pick(false), pick(true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Detection;
    use crate::text::Labels;

    fn toy(n: usize, events: &[&str], rumor_every: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| {
                    let labels = Labels {
                        detection: Some(if i % rumor_every == 0 { Detection::Rumor } else { Detection::Nonrumor }),
                        ..Labels::default()
                    };
                    Example::new(format!("{i}"), format!("tweet {i}"), events[i % events.len()], labels)
                })
                .collect(),
        )
    }

    fn detection(e: &Example) -> Option<usize> {
        e.labels.detection.map(|d| d.index())
    }

    #[test]
    fn loo_partitions_exactly() {
        let events = ["sydneysiege", "germanwings-crash", "ferguson", "charliehebdo", "ottawashooting"];
        let ds = toy(53, &events, 3);
        for ev in events {
            let (train, test) = split_leave_one_out(&ds, ev).unwrap();
            assert!(test.examples().iter().all(|e| e.event == ev));
            assert!(train.examples().iter().all(|e| e.event != ev));
            assert_eq!(train.len() + test.len(), ds.len());
            let mut ids: Vec<&str> = train.examples().iter().chain(test.examples()).map(|e| e.id.as_str()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), ds.len());
        }
    }

    #[test]
    fn loo_errors() {
        let ds = toy(5, &["only"], 2);
        assert!(matches!(split_leave_one_out(&ds, "only"), Err(DataError::EmptySplit(_))));
        match split_leave_one_out(&ds, "missing") {
            Err(DataError::UnknownEvent { available, .. }) => assert_eq!(available, ["only"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn holdout_sizes() {
        let ds = toy(100, &["e"], 2);
        let (train, test) = split_holdout(&ds, 0.1, 1, |_| None).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        let (_, test) = split_holdout(&ds, 0.1, 1, detection).unwrap();
        assert_eq!(test.counts().detection["Rumor"], 5);
        assert_eq!(test.counts().detection["Nonrumor"], 5);
    }

    #[test]
    fn holdout_stratification_within_one() {
        let ds = toy(97, &["e"], 3);
        let (train, test) = split_holdout(&ds, 0.17, 4, detection).unwrap();
        assert_eq!(train.len() + test.len(), 97);
        for (class, &n) in &ds.counts().detection {
            let got = *test.counts().detection.get(class).unwrap_or(&0) as f64;
            assert!((got - n as f64 * 0.17).abs() <= 1.0, "{class}: {got}");
        }
    }

    #[test]
    fn holdout_determinism() {
        let ds = toy(20, &["e"], 2);
        let a = split_holdout(&ds, 0.25, 7, detection).unwrap();
        let b = split_holdout(&ds, 0.25, 7, detection).unwrap();
        assert_eq!(a, b);
        let differs = (8..20).any(|s| split_holdout(&ds, 0.25, s, detection).unwrap().1 != a.1);
        assert!(differs);
    }

    #[test]
    fn singleton_class_stays_in_train() {
        let mut ds = toy(10, &["e"], 100);
        let mut ex = ds.examples().to_vec();
        ex[3].labels.detection = Some(Detection::Rumor);
        ex[0].labels.detection = Some(Detection::Nonrumor);
        ds = Dataset::new(ex);
        let (train, test) = split_holdout(&ds, 0.5, 0, detection).unwrap();
        assert!(train.examples().iter().any(|e| e.id == "3"));
        assert!(!test.counts().detection.contains_key("Rumor"));
    }

    #[test]
    fn fraction_bounds() {
        let ds = toy(10, &["e"], 2);
        assert!(split_holdout(&ds, 0.0, 0, detection).is_err());
        assert!(split_holdout(&ds, 1.0, 0, detection).is_err());
    }
}
