//! Synthetic corpora for sanity runs and the co-training ablation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labels::{Detection, Stance, Task, Veracity, PHEME_EVENTS};
use crate::text::{Dataset, Example, Labels};

/// Letter-only spelling of `i` (the tokenizer splits digits off words).
pub fn alpha(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn filler<R: Rng + ?Sized>(vocab: usize, rng: &mut R) -> String {
    format!("w{}", alpha(rng.random_range(0..vocab)))
}

/// `n` short sentences over a small vocabulary.
pub fn toy_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..8);
            (0..len).map(|_| filler(20, &mut rng)).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn labels_for(task: Task, class: usize) -> Labels {
    let mut labels = Labels::default();
    match task {
        Task::Detection => labels.detection = Detection::from_index(class),
        Task::Stance => labels.stance = Stance::from_index(class),
        Task::Veracity => labels.veracity = Veracity::from_index(class),
        Task::Tracking => {}
    }
    labels
}

/// Number of classes of the synthetic task; tracking uses the five events.
pub fn class_count(task: Task) -> usize {
    match task {
        Task::Detection => 2,
        Task::Tracking => PHEME_EVENTS.len(),
        Task::Stance => 4,
        Task::Veracity => 3,
    }
}

/// Each tweet holds the marker token `mark<alpha(c)>` of its class among random
/// filler words. Tracking classes are events.
pub fn marker_dataset(task: Task, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = class_count(task);
    let examples = (0..n)
        .map(|i| {
            let class = i % classes;
            let len = rng.random_range(3..6);
            let mut words: Vec<String> = (0..len).map(|_| filler(30, &mut rng)).collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, format!("mark{}", alpha(class)));
            let event = if task == Task::Tracking {
                PHEME_EVENTS[class].0
            } else {
                PHEME_EVENTS[i % PHEME_EVENTS.len()].0
            };
            Example::new(format!("m{i}"), words.join(" "), event, labels_for(task, class))
        })
        .collect();
    Dataset::new(examples)
}

/// Stance-labelled tweets whose class is `(a + b) mod 4` for the two signal
/// tokens `sa<alpha(a)>` and `sb<alpha(b)>` they contain. Neither token alone says
/// anything about the class.
pub fn cooccurrence_dataset(n: usize, filler_vocab: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let a = rng.random_range(0..4);
            let b = rng.random_range(0..4);
            let class = (a + b) % 4;
            let len = rng.random_range(6..11);
            let mut words: Vec<String> = (0..len).map(|_| filler(filler_vocab, &mut rng)).collect();
            for tok in [format!("sa{}", alpha(a)), format!("sb{}", alpha(b))] {
                let at = rng.random_range(0..=words.len());
                words.insert(at, tok);
            }
            Example::new(
                format!("c{i}"),
                words.join(" "),
                PHEME_EVENTS[i % PHEME_EVENTS.len()].0,
                labels_for(Task::Stance, class),
            )
        })
        .collect();
    Dataset::new(examples)
}
